"""SVG plots of a run's series.  Byproducts only; nothing reads them back."""
from __future__ import annotations

import warnings
from pathlib import Path

from .runner import RunRecord


def emit_plots(run: RunRecord, out_dir=None) -> list[Path]:
    """One SVG per series.  Series without points are skipped with a warning.
    Output is byte-stable: no date metadata and a fixed hash salt."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir if out_dir is not None else ".")
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "erosion", "svg.fonttype": "none"}):
        for name, ser in sorted(run.series.items()):
            lines = [ln for ln in ser.get("lines", []) if len(ln.get("x", ())) > 0]
            if not lines:
                warnings.warn(f"series {name!r} is empty; no plot written", stacklevel=2)
                continue
            fig, ax = plt.subplots(figsize=(6.0, 4.0))
            for ln in lines:
                if ser.get("kind") == "scatter":
                    ax.plot(ln["x"], ln["y"], "o", ms=3, label=ln.get("label"))
                else:
                    ax.plot(ln["x"], ln["y"], lw=1.0, label=ln.get("label"))
            ax.set_title(ser.get("title", name))
            ax.set_xlabel(ser.get("xlabel", ""))
            ax.set_ylabel(ser.get("ylabel", ""))
            if any(ln.get("label") for ln in lines):
                ax.legend(fontsize=8)
            fig.tight_layout()
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
