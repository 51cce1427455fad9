"""Render figures from experiment artifacts, next to the delimited output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .gridio import read_density, read_particles


def _read_csv(path: Path) -> tuple[list[str], np.ndarray, list[list[str]]]:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    raw = [ln.split(",") for ln in lines[1:]]
    numeric = []
    for row in raw:
        vals = []
        for cell in row:
            try:
                vals.append(float(cell))
            except ValueError:
                vals.append(np.nan)
        numeric.append(vals)
    return header, np.array(numeric), raw


def render(out_dir: str | Path) -> list[Path]:
    """Produce PNG figures for the experiment recorded in out_dir."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    experiment = manifest["config"]["experiment"]
    made: list[Path] = []
    if experiment == "pde_validation":
        made += _pde_figures(out)
    elif experiment == "chaos_rate":
        made += _chaos_figures(out)
    elif experiment == "regularity_suite":
        made += _regularity_figures(out)
    elif experiment == "large_deviation":
        made += _ldp_figures(out)
    elif experiment == "fluctuation":
        made += _fluct_figures(out)
    elif experiment == "simulate":
        made += _simulate_figures(out)
    return made


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _pde_figures(out: Path) -> list[Path]:
    header, data, _ = _read_csv(out / "pde_errors.csv")
    made = []
    fig, ax = plt.subplots(figsize=(6, 4))
    if "linf_error" in header:
        j = header.index("linf_error")
        ax.semilogy(data[:, 0], np.maximum(data[:, j], 1e-18), "o-", label="Linf error")
        ax.set_ylabel("Linf error vs closed form")
    ax.plot(data[:, 0], np.abs(data[:, 1] - 1.0), "s--", label="|mass - 1|")
    ax.set_yscale("log")
    ax.set_xlabel("time")
    ax.legend()
    ax.set_title("Vorticity solver validation")
    made.append(_save(fig, out / "pde_errors.png"))
    snaps = sorted(out.glob("density*.vxg"))
    if snaps:
        grid = read_density(snaps[-1])
        fig, ax = plt.subplots(figsize=(5, 4))
        ext = [-grid.half_width, grid.half_width, -grid.half_width, grid.half_width]
        im = ax.imshow(grid.values.T, origin="lower", extent=ext, cmap="viridis")
        fig.colorbar(im, ax=ax, label="density")
        ax.set_title(f"density at t = {grid.time:g}")
        made.append(_save(fig, out / "pde_density.png"))
    return made


def _chaos_figures(out: Path) -> list[Path]:
    header, data, _ = _read_csv(out / "chaos.csv")
    fit = json.loads((out / "chaos_fit.json").read_text())["fit"]
    n = data[:, 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(n, data[:, 2], "o", label="L1 distance")
    xs = np.linspace(n.min(), n.max(), 50)
    ax.loglog(xs, np.exp(fit["intercept"]) * xs ** fit["slope"], "-",
              label=f"fit slope {fit['slope']:.3f} (r2 {fit['r2']:.3f})")
    ax.loglog(n, data[:, 1], "s", label="H1 estimate")
    ax.set_xlabel("N")
    ax.set_ylabel("distance to mean-field law")
    ax.legend()
    ax.set_title("Propagation of chaos rate")
    return [_save(fig, out / "chaos_rate.png")]


def _regularity_figures(out: Path) -> list[Path]:
    header, data, raw = _read_csv(out / "regularity_stability.csv")
    names = [row[0] for row in raw]
    coarse = data[:, 1]
    fine = data[:, 2]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    x = np.arange(len(names))
    ax.bar(x - 0.2, np.abs(coarse), width=0.4, label="coarse grid")
    ax.bar(x + 0.2, np.abs(fine), width=0.4, label="refined grid")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("|fitted constant|")
    ax.legend()
    ax.set_title("Fitted inequality constants under refinement")
    return [_save(fig, out / "regularity_constants.png")]


def _ldp_figures(out: Path) -> list[Path]:
    header, data, _ = _read_csv(out / "large_deviation.csv")
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].plot(data[:, 0], data[:, 3], "o-")
    axes[0].set_xlabel("grid n")
    axes[0].set_ylabel("fitted envelope constant")
    axes[0].set_title("sup_y |phi| quadratic envelope")
    axes[1].semilogy(data[:, 0], np.maximum(data[:, 5], 1e-20), "o-", label="x integral")
    axes[1].semilogy(data[:, 0], np.maximum(data[:, 6], 1e-20), "s--", label="y integral")
    axes[1].set_xlabel("grid n")
    axes[1].set_title("cancellation integral maxima")
    axes[1].legend()
    return [_save(fig, out / "large_deviation.png")]


def _fluct_figures(out: Path) -> list[Path]:
    comp = json.loads((out / "fluct_comparison.json").read_text())
    per_h = comp["per_h"]
    vp = np.array([r["var_particle"] for r in per_h])
    vs = np.array([r["var_spde"] for r in per_h])
    labels = [r["h_id"] for r in per_h]
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.plot([0, max(vp.max(), vs.max())], [0, max(vp.max(), vs.max())], "k--", lw=1)
    ax.plot(vp, vs, "o")
    for x, y, lab in zip(vp, vs, labels):
        ax.annotate(lab, (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("particle variance")
    ax.set_ylabel("SPDE variance")
    ax.set_title(f"fluctuation variances at t = {comp['time']:g}")
    return [_save(fig, out / "fluct_variances.png")]


def _simulate_figures(out: Path) -> list[Path]:
    snaps = sorted(out.glob("run0000_snap*.vxc"))
    if not snaps:
        return []
    ens = read_particles(snaps[-1])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(ens.positions[:, 0], ens.positions[:, 1], ".", ms=2, alpha=0.6)
    ax.set_aspect("equal")
    ax.set_title(f"N = {ens.n} at t = {ens.time:g}")
    return [_save(fig, out / "particles.png")]
