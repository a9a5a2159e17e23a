"""Figures rendered from the tidy plot-data CSVs (columns figure, series, x, y, y_lo, y_hi)."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

TIDY_COLUMNS = ("figure", "series", "x", "y", "y_lo", "y_hi")

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 4.8
params = {
    "axes.labelsize": 10,
    "font.size": 9,
    "font.family": "serif",
    "mathtext.fontset": "stix",
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}

# axis labels and scales per figure id; unknown ids get linear axes
LAYOUT = {
    "nbody_invariants": ("t", "relative deviation", "linear", "symlog"),
    "vlasov_drift": ("t", "relative drift", "linear", "symlog"),
    "wlln": (r"$\ell$", r"$d_{KR}$", "log", "log"),
    "meanfield": ("N", r"$d_{KR}$ to $f_\bullet$", "log", "log"),
    "maxent_density": (r"$q_1$", r"$\rho$", "linear", "linear"),
    "maxent_sweep": ("parameter", "value", "linear", "linear"),
    "marginal": (r"$q_1$", "density", "linear", "linear"),
}


def write_tidy(path, rows) -> None:
    """Write tidy rows ``(figure, series, x, y[, y_lo, y_hi])``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIDY_COLUMNS)
        for r in rows:
            r = list(r) + [""] * (6 - len(r))
            w.writerow([r[0], r[1]] + ["" if v == "" else repr(float(v)) for v in r[2:]])


def read_tidy(path) -> dict:
    figs: dict = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            figs[row["figure"]][row["series"]].append(
                tuple(float(row[k]) if row[k] != "" else np.nan for k in ("x", "y", "y_lo", "y_hi"))
            )
    return figs


def render(path, out_dir=None) -> list[Path]:
    """Render every figure in a tidy CSV to ``<figure>.png`` next to it."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    out_dir = Path(out_dir) if out_dir else path.parent
    written = []
    with matplotlib.rc_context(params):
        for fig_id, series in sorted(read_tidy(path).items()):
            xlabel, ylabel, xscale, yscale = LAYOUT.get(fig_id, ("x", "y", "linear", "linear"))
            fig, ax = plt.subplots()
            for name, pts in sorted(series.items()):
                a = np.array(pts)
                a = a[np.argsort(a[:, 0], kind="stable")]
                line, = ax.plot(a[:, 0], a[:, 1], marker="o" if len(a) < 30 else None, label=name)
                if np.isfinite(a[:, 2]).any():
                    ax.fill_between(a[:, 0], a[:, 2], a[:, 3], color=line.get_color(), alpha=0.25, lw=0)
            ax.set_xscale(xscale)
            if yscale == "symlog":
                ax.set_yscale("symlog", linthresh=1e-16)
            else:
                ax.set_yscale(yscale)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if len(series) > 1:
                ax.legend()
            target = out_dir / f"{fig_id}.png"
            # fixed metadata keeps reruns byte-identical
            fig.savefig(target, metadata={"Software": None})
            plt.close(fig)
            written.append(target)
    return written
