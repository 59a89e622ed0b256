"""PNG figures for evaluation reports (matplotlib, Agg backend).

Figures are written next to the CSV breakdowns; metadata is stripped so
identical reports give identical files.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .masks import COVER_NAMES  # noqa: E402
from .metrics import GLOBAL  # noqa: E402
from .partition import LOW_LIGHT_SZA, NIGHT_SZA, RANGES  # noqa: E402

_SAVE = dict(dpi=100, bbox_inches="tight", metadata={"Software": None})


def _save(fig, path):
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def sza_curve_figure(report, path):
    """OA against solar zenith, with the range boundaries marked."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if report.sza_curve:
        centres = [(lo + hi) / 2 for lo, hi, _, _ in report.sza_curve]
        ax.plot(centres, [oa for *_, oa in report.sza_curve], "k.-")
    for x, style in ((report.sza_m, "--"), (LOW_LIGHT_SZA, ":"), (NIGHT_SZA, "-.")):
        ax.axvline(x, color="tab:red", linestyle=style, linewidth=1)
    ax.set_xlabel("solar zenith angle [deg]")
    ax.set_ylabel("OA [%]")
    ax.set_title(f"LM{report.num} {report.name}")
    return _save(fig, path)


def cover_figure(report, path):
    """Grouped bars: OA per cover stratum for each range."""
    cats = (GLOBAL,) + COVER_NAMES
    keys = [r.value for r in RANGES]
    width = 0.8 / len(cats)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    x = np.arange(len(keys))
    for k, cat in enumerate(cats):
        vals = [report.cover[key][cat][1] for key in keys]
        vals = [0.0 if math.isnan(v) else v for v in vals]
        ax.bar(x + (k - (len(cats) - 1) / 2) * width, vals, width, label=cat)
    ax.set_xticks(x, keys)
    ax.set_ylabel("OA [%]")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7, ncol=len(cats), loc="lower center", bbox_to_anchor=(0.5, 1.0), frameon=False)
    ax.set_title(f"LM{report.num} {report.name}", pad=22)
    return _save(fig, path)


def maps_figure(report, path):
    """Mean per-pixel accuracy for each range."""
    fig, axes = plt.subplots(1, len(RANGES), figsize=(3 * len(RANGES), 3))
    for ax, rng in zip(axes, RANGES):
        im = ax.imshow(report.maps[rng.value], vmin=0, vmax=1, cmap="viridis", interpolation="nearest")
        ax.set_title(rng.value)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=list(axes), shrink=0.8)
    return _save(fig, path)


def summary_figure(reports, path):
    """Global OA and kappa per landmark, plus their histograms."""
    reports = sorted(reports, key=lambda r: r.num)
    oa = np.array([r.scores(GLOBAL)[0] for r in reports])
    kappa = np.array([r.scores(GLOBAL)[1] for r in reports])
    fig, (a0, a1, a2) = plt.subplots(1, 3, figsize=(12, 3.5))
    x = np.arange(len(reports))
    a0.plot(x, oa / 100, "o", label="OA / 100")
    a0.plot(x, kappa, "s", label="kappa")
    a0.set_xticks(x, [str(r.num) for r in reports], fontsize=7)
    a0.set_xlabel("landmark")
    a0.legend(fontsize=7)
    a1.hist(oa[~np.isnan(oa)], bins=np.arange(0, 102.5, 2.5))
    a1.set_xlabel("global OA [%]")
    a2.hist(kappa[~np.isnan(kappa)], bins=np.linspace(-1, 1, 41))
    a2.set_xlabel("global kappa")
    return _save(fig, path)


def write_figures(reports, out_dir):
    """All figures for a set of reports; returns the written paths."""
    from pathlib import Path
    out = Path(out_dir)
    paths = []
    for rep in reports:
        tag = f"LM{rep.num:03d}"
        paths.append(sza_curve_figure(rep, out / f"fig_sza_{tag}.png"))
        paths.append(cover_figure(rep, out / f"fig_cover_{tag}.png"))
        paths.append(maps_figure(rep, out / f"fig_maps_{tag}.png"))
    if reports:
        paths.append(summary_figure(reports, out / "fig_summary.png"))
    return paths
