"""Static SVG renderings of the analysis results.

Output is byte-deterministic for fixed inputs: the SVG hash salt is pinned
and the date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import HomodyneError  # noqa: E402

_RC = {"svg.hashsalt": "homodyne-decay", "svg.fonttype": "path", "font.size": 9}


class FigureError(HomodyneError, OSError):
    pass


def _out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FigureError(f"cannot create output directory {out}: {exc}") from None
    return out


def _save(fig, path: Path) -> Path:
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise FigureError(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)
    return path


def _xz_axes(ax):
    th = np.linspace(0, 2 * np.pi, 361)
    ax.plot(np.cos(th), np.sin(th), color="0.6", lw=0.8)
    ax.axhline(0, color="0.85", lw=0.5)
    ax.axvline(0, color="0.85", lw=0.5)
    ax.set_xlim(-1.1, 1.1)
    ax.set_ylim(-1.1, 1.1)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("z")


def calibration_figure(result, out_dir) -> list[Path]:
    out = _out(out_dir)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        for h, label, color in ((result.hist_minus, "-x", "tab:blue"), (result.hist_plus, "+x", "tab:red")):
            if len(h):
                ax.stairs(h.counts, h.edges, color=color, label=label)
        ax.set_xlabel("integrated signal V")
        ax.set_ylabel("counts")
        ax.legend(frameon=False)
        fig.tight_layout()
        return [_save(fig, out / "calibration_hist.svg")]


def trajectory_figure(traj, out_dir, name: str = "trajectory.svg") -> list[Path]:
    out = _out(out_dir)
    with plt.rc_context(_RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
        t = traj.times * 1e6
        a1.plot(t, traj.x, label="x")
        a1.plot(t, traj.z, label="z")
        a1.set_xlabel("t (µs)")
        a1.legend(frameon=False)
        _xz_axes(a2)
        a2.plot(traj.x, traj.z, color="k", lw=0.8)
        fig.tight_layout()
        return [_save(fig, out / name)]


def tomogram_figure(tomograms, out_dir, name: str = "tomogram.svg") -> list[Path]:
    """X-Z scatter of per-bin means, coloured by relative occurrence."""
    out = _out(out_dir)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        _xz_axes(ax)
        for tg in tomograms:
            occ = tg.count / max(int(tg.count.max()), 1)
            ax.plot(tg.x, tg.z, color="0.7", lw=0.5)
            sc = ax.scatter(tg.x, tg.z, c=occ, cmap="viridis", vmin=0, vmax=1, s=14)
        if tomograms:
            fig.colorbar(sc, ax=ax, label="relative occurrence", shrink=0.8)
        fig.tight_layout()
        return [_save(fig, out / name)]


def backaction_figures(bmap, out_dir) -> list[Path]:
    """One quiver panel per probe-signal sign; empty maps give bare axes."""
    out = _out(out_dir)
    paths = []
    with plt.rc_context(_RC):
        for sign, label in ((0, "negative"), (1, "positive")):
            fig, ax = plt.subplots(figsize=(4, 4))
            _xz_axes(ax)
            ok = bmap.populated[:, sign]
            if ok.any():
                ax.quiver(
                    bmap.x_i[ok, sign],
                    bmap.z_i[ok, sign],
                    bmap.dx[ok, sign],
                    bmap.dz[ok, sign],
                    angles="xy",
                    scale_units="xy",
                    scale=0.25,
                    width=0.006,
                    color="tab:blue" if sign == 0 else "tab:red",
                )
            ax.set_title(f"{label} dV")
            fig.tight_layout()
            paths.append(_save(fig, out / f"backaction_{label}.svg"))
        fig, ax = plt.subplots(figsize=(4, 3))
        h = bmap.dV_hist
        if len(h):
            neg = h.edges[1:] <= 0
            ax.stairs(np.where(neg, h.counts, 0), h.edges, color="tab:blue")
            ax.stairs(np.where(neg, 0, h.counts), h.edges, color="tab:red")
        ax.set_xlabel("dV")
        ax.set_ylabel("counts")
        fig.tight_layout()
        paths.append(_save(fig, out / "probe_hist.svg"))
    return paths


def excitation_figure(stats, out_dir) -> list[Path]:
    out = _out(out_dir)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        for thr, frac in zip(stats.thresholds, stats.fraction):
            ax.plot(stats.times * 1e6, frac, label=f"z' = {thr:g}")
        ax.set_xlabel("t (µs)")
        ax.set_ylabel("fraction excited")
        ax.legend(frameon=False)
        fig.tight_layout()
        return [_save(fig, out / "excitation.svg")]


def histogram_figures(hists, out_dir) -> list[Path]:
    """Greyscale marginals of x and z versus time, each column peaking at 1."""
    out = _out(out_dir)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3))
        t = hists.times * 1e6
        for ax, marg, edges, label in (
            (axes[0], hists.x_marginal, hists.x_edges, "x"),
            (axes[1], hists.z_marginal, hists.z_edges, "z"),
        ):
            centers = 0.5 * (edges[:-1] + edges[1:])
            for j in range(t.size):
                ax.scatter(np.full(centers.size, t[j]), centers, c=marg[j], cmap="Greys", vmin=0, vmax=1, s=8, marker="s")
            ax.set_xlabel("t (µs)")
            ax.set_ylabel(label)
        fig.tight_layout()
        return [_save(fig, out / "histograms.svg")]


def validation_figures(report, out_dir) -> list[Path]:
    out = _out(out_dir)
    with plt.rc_context(_RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
        t = report.times * 1e6
        a1.plot(t, report.x_ref, "--", color="tab:blue", label="x tracked")
        a1.plot(t, report.x_cond, color="tab:blue", label="x tomography")
        a1.plot(t, report.z_ref, "--", color="tab:red", label="z tracked")
        a1.plot(t, report.z_cond, color="tab:red", label="z tomography")
        a1.set_xlabel("t (µs)")
        a1.legend(frameon=False, fontsize=7)
        a2.plot([-1, 1], [-1, 1], color="0.6", lw=0.8)
        for axis, color in (("x", "tab:blue"), ("z", "tab:red")):
            sc = report.scatter[axis]
            ok = sc["count"] > 0
            a2.plot(sc["predicted"][ok], sc["measured"][ok], "o", ms=3, color=color, label=axis)
        a2.set_xlabel("predicted")
        a2.set_ylabel("projective average")
        a2.legend(frameon=False)
        fig.tight_layout()
        return [_save(fig, out / "validation.svg")]
