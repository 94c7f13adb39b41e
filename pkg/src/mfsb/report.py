"""Render a result bundle: a plain-text summary table plus figures.

The table mirrors the headline quantities (total cost, cost upper bound,
worst-knot violation probability); figures are written next to the CSVs.
"""

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)


def _fmt_pm(value, stderr):
    if value is None:
        return "n/a"
    if stderr is None:
        return f"{value:.6g}"
    return f"{value:.6g} +/- {stderr:.2g}"


def render_text_table(summary: dict) -> str:
    simulation = summary.get("simulation") or {}
    gap = summary.get("gap") or {}
    rows = [
        ("Scenario", summary.get("name", "?")),
        ("Status", summary.get("status", "?")),
        ("Total Cost J", _fmt_pm(simulation.get("total_cost"),
                                 simulation.get("total_cost_stderr"))),
        ("Cost Upper Bound", f"{summary['cost_upper_bound']:.6g}"),
        ("max_t P(x_t not in X)", _fmt_pm(simulation.get("max_violation"), None)),
        ("Bound holds (J <= J_OT + 3 se)", str(simulation.get("bound_holds", "n/a"))),
        ("Gap estimate", _fmt_pm(gap.get("estimate"), gap.get("stderr"))),
        ("Plan iterations", str(len(summary.get("iterations", [])))),
    ]
    width = max(len(r[0]) for r in rows)
    lines = [f"{name:<{width}}  {value}" for name, value in rows]
    return "\n".join(lines) + "\n"


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _plot_obstacles(ax, scenario_doc):
    for obs in scenario_doc.get("obstacles", []):
        # face normals of axis-aligned rectangles bound the patch
        los, his = [-np.inf, -np.inf], [np.inf, np.inf]
        for face in obs["faces"]:
            a = np.asarray(face["a"], float)
            beta = face["beta"]
            for axis in (0, 1):
                if a[axis] > 0:
                    los[axis] = max(los[axis], beta / a[axis])
                elif a[axis] < 0:
                    his[axis] = min(his[axis], beta / a[axis])
        if np.all(np.isfinite(los)) and np.all(np.isfinite(his)):
            ax.add_patch(plt.Rectangle((los[0], los[1]), his[0] - los[0],
                                       his[1] - los[1], color="0.75", zorder=0))


def _figure_trajectories(out: Path, scenario_doc) -> bool:
    path = out / "trajectories.csv"
    if not path.exists():
        return False
    rows = _read_csv(path)
    planar = "x_1" in rows[0]
    agents = {}
    for row in rows:
        point = ((float(row["x_0"]), float(row["x_1"])) if planar
                 else (float(row["time"]), float(row["x_0"])))
        agents.setdefault(int(row["agent"]), []).append(point)
    fig, ax = plt.subplots(figsize=(6, 5))
    if planar:
        _plot_obstacles(ax, scenario_doc)
    shown = sorted(agents)[:100]
    for i in shown:
        xy = np.array(agents[i])
        ax.plot(xy[:, 0], xy[:, 1], lw=0.4, alpha=0.5, color="tab:blue")
        ax.plot(xy[0, 0], xy[0, 1], ".", ms=2, color="tab:orange")
        ax.plot(xy[-1, 0], xy[-1, 1], ".", ms=2, color="tab:green")
    ax.set_xlabel("x_0" if planar else "t")
    ax.set_ylabel("x_1" if planar else "x_0")
    ax.set_title(f"agent trajectories ({len(shown)} shown)")
    fig.tight_layout()
    fig.savefig(out / "fig_trajectories.png", dpi=150)
    plt.close(fig)
    return True


def _figure_flow(out: Path, scenario_doc) -> bool:
    snaps = sorted((out / "flow").glob("flow_*.csv"))
    if not snaps:
        return False
    probe = _read_csv(snaps[0])
    if not probe or "mu_1" not in probe[0]:
        return False  # ellipse plot needs at least two state dimensions
    fig, ax = plt.subplots(figsize=(6, 5))
    _plot_obstacles(ax, scenario_doc)
    cmap = plt.get_cmap("viridis")
    for si, snap in enumerate(snaps):
        color = cmap(si / max(1, len(snaps) - 1))
        for row in _read_csv(snap):
            mu = np.array([float(row["mu_0"]), float(row["mu_1"])])
            s00 = float(row["Sigma_0_0"])
            s10 = float(row["Sigma_1_0"])
            s11 = float(row["Sigma_1_1"])
            cov = np.array([[s00, s10], [s10, s11]])
            w, v = np.linalg.eigh(cov)
            theta = np.linspace(0, 2 * np.pi, 64)
            circ = (v * np.sqrt(np.clip(w, 0, None))) @ np.vstack(
                [np.cos(theta), np.sin(theta)])
            ax.plot(mu[0] + 2 * circ[0], mu[1] + 2 * circ[1], color=color,
                    lw=0.8, alpha=0.8)
    ax.set_xlabel("x_0")
    ax.set_ylabel("x_1")
    ax.set_title("mixture flow (2-sigma ellipses per snapshot)")
    fig.tight_layout()
    fig.savefig(out / "fig_flow.png", dpi=150)
    plt.close(fig)
    return True


def _figure_iterations(out: Path) -> bool:
    path = out / "iterations.csv"
    if not path.exists():
        return False
    rows = _read_csv(path)
    if len(rows) < 2:
        return False
    its = [int(r["iteration"]) for r in rows]
    jot = [float(r["j_ot"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(its, jot, "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("J_OT")
    ax.set_title("transport-plan alternation")
    fig.tight_layout()
    fig.savefig(out / "fig_iterations.png", dpi=150)
    plt.close(fig)
    return True


def render_report(out_dir) -> Path:
    """Write report.txt and figures into the bundle directory."""
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    scenario_doc = json.loads((out / "scenario.json").read_text(encoding="utf-8"))
    text = render_text_table(summary)
    (out / "report.txt").write_text(text, encoding="utf-8")
    made = {
        "trajectories": _figure_trajectories(out, scenario_doc),
        "flow": _figure_flow(out, scenario_doc),
        "iterations": _figure_iterations(out),
    }
    log.info("report rendered (%s)",
             ", ".join(k for k, v in made.items() if v) or "table only")
    return out / "report.txt"
