"""Figure output for experiment runs.

Two artifacts are produced per run: a gnuplot script that redraws the
figure from ``errors.csv`` and, when matplotlib is importable, a PNG
rendered directly. Rendering goes through the object-oriented
``Figure`` API with the Agg canvas, so no global pyplot state or display
is involved.
"""

from __future__ import annotations

import math
from pathlib import Path

__all__ = ["gnuplot_script", "render_png", "PLOT_LAYOUTS"]

# per CSV layout: x column, (y column, legend) pairs, axis labels, log scale on y
PLOT_LAYOUTS = {
    "parareal": {
        "x": "iteration",
        "series": [("error_vs_fine", "error vs sequential fine"),
                   ("error_vs_exact", "error vs exact")],
        "xlabel": "parareal iteration",
        "ylabel": "relative max-abs error",
    },
    "acceleration": {
        "x": "time",
        "series": [("ratio", "accelerated / plain residual")],
        "xlabel": "time",
        "ylabel": "residual ratio",
    },
    "control": {
        "x": "outer_iter",
        "series": [("cost", "penalized cost"),
                   ("terminal_residual", "terminal residual"),
                   ("max_jump", "max jump")],
        "xlabel": "gradient iteration",
        "ylabel": "value",
    },
}


def gnuplot_script(layout: str, header: list, title: str, csv_name: str = "errors.csv") -> str:
    """gnuplot commands plotting the CSV columns of ``layout`` on a log y-axis."""
    spec = PLOT_LAYOUTS[layout]
    xcol = header.index(spec["x"]) + 1
    lines = [
        "# gnuplot script; run with: gnuplot plot.gp",
        "set datafile separator ','",
        "set terminal pngcairo size 800,600",
        "set output 'figure_gnuplot.png'",
        f"set title '{title}'",
        f"set xlabel '{spec['xlabel']}'",
        f"set ylabel '{spec['ylabel']}'",
        "set logscale y",
        "set format y '%.0e'",
        "set grid",
        "set key top right",
    ]
    parts = []
    for col, label in spec["series"]:
        ycol = header.index(col) + 1
        parts.append(f"'{csv_name}' skip 1 using {xcol}:{ycol} with linespoints title '{label}'")
    lines.append("plot " + ", \\\n     ".join(parts))
    return "\n".join(lines) + "\n"


def render_png(path, layout: str, header: list, rows: list, title: str) -> bool:
    """Render the figure to ``path``. Returns False if matplotlib is unavailable.

    Non-positive and missing values are dropped from the log-scale plot.
    """
    try:
        from matplotlib.backends.backend_agg import FigureCanvasAgg
        from matplotlib.figure import Figure
    except ImportError:
        return False

    spec = PLOT_LAYOUTS[layout]
    xi = header.index(spec["x"])
    fig = Figure(figsize=(6.4, 4.8))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    drawn = False
    for col, label in spec["series"]:
        yi = header.index(col)
        pts = [(r[xi], r[yi]) for r in rows
               if isinstance(r[yi], float) and r[yi] > 0 and math.isfinite(r[yi])]
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.semilogy(xs, ys, marker="o" if len(xs) <= 60 else None, markersize=3, label=label)
        drawn = True
    ax.set_xlabel(spec["xlabel"])
    ax.set_ylabel(spec["ylabel"])
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if drawn:
        ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    return True
