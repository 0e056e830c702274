"""Power curves as SVG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import PowerTable  # noqa: E402

__all__ = ["emit_power_plot"]


def emit_power_plot(table: PowerTable, path, title: str | None = None) -> Path:
    """Rejection rate against the mixing fraction, one line per test, with
    the nominal level as a dashed reference.

    Output is byte-stable for equal tables: the SVG id salt is fixed and no
    date is written.
    """
    if not table.rows:
        raise ValueError("table is empty")
    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "phackpower", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        try:
            for name in table.tests:
                rows = sorted((r for r in table.rows if r.test == name), key=lambda r: r.tau)
                ax.plot([r.tau for r in rows], [r.rejection_rate for r in rows], marker="o", ms=3, label=name)
            ax.axhline(table.level, color="grey", ls="--", lw=0.8)
            ax.set_xlim(-0.02, 1.02)
            ax.set_ylim(0.0, 1.0)
            ax.set_xlabel("fraction of searching studies")
            ax.set_ylabel("rejection rate")
            if title:
                ax.set_title(title)
            ax.legend(fontsize=7, frameon=False)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
