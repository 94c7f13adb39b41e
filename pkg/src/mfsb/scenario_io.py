"""Scenario files, result bundles, and their serialization.

Scenarios are UTF-8 JSON (human-writable, schema-checked); bulk numerics go
to CSV.  Covariances are stored as row-major lower triangles so asymmetric
input is unrepresentable.  All numeric CSV serialization uses 17 significant
digits; JSON floats round-trip exactly via repr.

A result bundle is a deterministic file set plus manifest.json listing each
file with its SHA-256 digest.  Wall-clock timings go to timings.json, which
is deliberately not listed in the manifest (reruns must be byte-identical).
"""

import csv
import hashlib
import json
import logging
from pathlib import Path

import jsonschema
import numpy as np

from .chance import ChanceSpec, HalfSpace, Obstacle, Route
from .dynamics import LTVSystem, TimeGrid
from .errors import SchemaError
from .gaussmix import Gaussian, GaussianMixture
from .meanfield import MfsbResult, Scenario
from .mixture import MixtureSolution, write_flow_csv
from .ocs import ConditionalPolicy, write_policy_csv
from .sim import SwarmMetrics, SwarmRun, write_trajectories_csv
from .transport import TransportPlan

log = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-6

_MATRIX = {"type": "array"}
_VECTOR = {"type": "array", "items": {"type": "number"}}

_COMPONENT = {
    "type": "object",
    "required": ["weight", "mean", "cov_lower_triangle"],
    "additionalProperties": False,
    "properties": {
        "weight": {"type": "number", "exclusiveMinimum": 0},
        "mean": _VECTOR,
        "cov_lower_triangle": _VECTOR,
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["grid", "system", "rho0", "rho1"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["knots"],
            "additionalProperties": False,
            "properties": {"knots": {"type": "integer", "minimum": 2}},
        },
        "system": {
            "type": "object",
            "required": ["n", "m", "q", "A", "B", "D"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "q": {"type": "integer", "minimum": 1},
                "A": _MATRIX, "Abar": _MATRIX, "B": _MATRIX, "D": _MATRIX,
            },
        },
        "rho0": {"type": "array", "minItems": 1, "items": _COMPONENT},
        "rho1": {"type": "array", "minItems": 1, "items": _COMPONENT},
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["faces"],
                "additionalProperties": False,
                "properties": {
                    "faces": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["a", "beta"],
                            "additionalProperties": False,
                            "properties": {"a": _VECTOR, "beta": {"type": "number"}},
                        },
                    },
                },
            },
        },
        "routes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "face_choice"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "face_choice": {"type": "array", "items": {"type": "integer"}},
                },
            },
        },
        "chance": {
            "type": "object",
            "required": ["total_budget"],
            "additionalProperties": False,
            "properties": {
                "total_budget": {"type": "number"},
                "per_face_budget": {"type": "number"},
                "knot_window": {
                    "type": "array", "items": {"type": "integer"},
                    "minItems": 2, "maxItems": 2,
                },
            },
        },
    },
}


def _json_path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        # point at the missing property itself, not its parent object
        missing = error.message.split("'")[1] if "'" in error.message else ""
        if missing:
            parts.append(missing)
    return ".".join(parts) or "$"


def _parse_matrix(raw, T, rows, cols, where):
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1:
        if arr.size == rows * cols:
            arr = arr.reshape(rows, cols)
        elif arr.size == T * rows * cols:
            arr = arr.reshape(T, rows, cols)
        else:
            raise SchemaError(
                f"{where}: flat array of length {arr.size} is neither "
                f"{rows * cols} (constant) nor {T * rows * cols} (per-knot)")
    if arr.ndim == 2 and arr.shape == (rows, cols):
        return arr
    if arr.ndim == 3 and arr.shape == (T, rows, cols):
        return arr
    raise SchemaError(f"{where}: shape {arr.shape} is neither ({rows}, {cols}) "
                      f"nor ({T}, {rows}, {cols})")


def _cov_from_lower_triangle(flat, n, where):
    flat = np.asarray(flat, dtype=float)
    expect = n * (n + 1) // 2
    if flat.size != expect:
        raise SchemaError(
            f"{where}: lower triangle of a {n}x{n} matrix needs {expect} "
            f"entries, got {flat.size}")
    cov = np.zeros((n, n))
    cov[np.tril_indices(n)] = flat
    cov = cov + np.tril(cov, -1).T
    return cov


def _parse_mixture(items, n, where):
    weights = np.array([c["weight"] for c in items], dtype=float)
    total = weights.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise SchemaError(f"{where}: weights sum to {total!r}, expected 1")
    weights = weights / total
    comps = []
    for ci, comp in enumerate(items):
        mean = np.asarray(comp["mean"], dtype=float)
        if mean.size != n:
            raise SchemaError(f"{where}[{ci}].mean: expected dimension {n}")
        cov = _cov_from_lower_triangle(comp["cov_lower_triangle"], n,
                                       f"{where}[{ci}].cov_lower_triangle")
        w = np.linalg.eigvalsh(cov)
        if w[0] <= 0:
            raise SchemaError(
                f"{where}[{ci}]: covariance not positive definite "
                f"(min eigenvalue {w[0]:.3e})")
        comps.append(Gaussian(mean, cov))
    return GaussianMixture(weights, tuple(comps))


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc, default_name=path.stem)


def scenario_from_dict(doc: dict, default_name: str = "scenario") -> Scenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: str(e.absolute_path))
    if errors:
        raise SchemaError(f"schema error at {_json_path(errors[0])}: "
                          f"{errors[0].message}")

    T = doc["grid"]["knots"]
    grid = TimeGrid.uniform(T)
    sysd = doc["system"]
    n, m, q = sysd["n"], sysd["m"], sysd["q"]
    A = _parse_matrix(sysd["A"], T, n, n, "system.A")
    Abar = (_parse_matrix(sysd["Abar"], T, n, n, "system.Abar")
            if "Abar" in sysd else np.zeros((n, n)))
    B = _parse_matrix(sysd["B"], T, n, m, "system.B")
    D = _parse_matrix(sysd["D"], T, n, q, "system.D")
    sys = LTVSystem(n=n, m=m, q=q, A=A, Abar=Abar, B=B, D=D, grid=grid)

    rho0 = _parse_mixture(doc["rho0"], n, "rho0")
    rho1 = _parse_mixture(doc["rho1"], n, "rho1")

    chance = None
    window = None
    if "chance" in doc:
        ch = doc["chance"]
        window = tuple(ch["knot_window"]) if "knot_window" in ch else None
        chance = ChanceSpec(total_budget=ch["total_budget"],
                            per_face_budget=ch.get("per_face_budget"),
                            window=window)

    obstacles = []
    for oi, obs in enumerate(doc.get("obstacles", [])):
        faces = []
        for fi, f in enumerate(obs["faces"]):
            a = np.asarray(f["a"], dtype=float)
            if a.size != n:
                raise SchemaError(f"obstacles[{oi}].faces[{fi}].a: "
                                  f"expected dimension {n}")
            faces.append(HalfSpace(a=a, beta=f["beta"], window=window))
        obstacles.append(Obstacle(tuple(faces)))

    if "routes" in doc:
        routes = tuple(Route(r["name"], tuple(r["face_choice"]))
                       for r in doc["routes"])
    else:
        routes = (Route("direct", tuple(0 for _ in obstacles)),)

    return Scenario(sys=sys, rho0=rho0, rho1=rho1, obstacles=tuple(obstacles),
                    routes=routes, chance=chance,
                    name=doc.get("name", default_name))


def scenario_to_dict(scn: Scenario) -> dict:
    def matrix_out(stack):
        if np.all(stack == stack[0]):
            return stack[0].tolist()
        return stack.tolist()

    def mixture_out(mix):
        out = []
        for w, c in zip(mix.weights, mix.components):
            tril = c.cov[np.tril_indices(c.dim)]
            out.append({"weight": float(w), "mean": c.mean.tolist(),
                        "cov_lower_triangle": tril.tolist()})
        return out

    doc = {
        "name": scn.name,
        "grid": {"knots": scn.grid.count},
        "system": {
            "n": scn.sys.n, "m": scn.sys.m, "q": scn.sys.q,
            "A": matrix_out(scn.sys.A),
            "Abar": matrix_out(scn.sys.Abar),
            "B": matrix_out(scn.sys.B),
            "D": matrix_out(scn.sys.D),
        },
        "rho0": mixture_out(scn.rho0),
        "rho1": mixture_out(scn.rho1),
    }
    if scn.obstacles:
        doc["obstacles"] = [
            {"faces": [{"a": f.a.tolist(), "beta": f.beta} for f in obs.faces]}
            for obs in scn.obstacles
        ]
    if scn.routes and (len(scn.routes) > 1 or scn.obstacles):
        doc["routes"] = [{"name": r.name, "face_choice": list(r.face_choice)}
                         for r in scn.routes]
    if scn.chance is not None:
        ch = {"total_budget": scn.chance.total_budget}
        if scn.chance.per_face_budget is not None:
            ch["per_face_budget"] = scn.chance.per_face_budget
        if scn.chance.window is not None:
            ch["knot_window"] = [int(k) for k in scn.chance.window]
        doc["chance"] = ch
    return doc


def write_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scn), indent=2) + "\n",
                          encoding="utf-8")


# -- result bundles ----------------------------------------------------------

FLOW_SNAPSHOTS = 11


def _fmt(x) -> str:
    return f"{x:.17g}"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def write_results(scn: Scenario, result: MfsbResult, out_dir,
                  run: SwarmRun | None = None,
                  metrics: SwarmMetrics | None = None,
                  gap: dict | None = None,
                  timings: dict | None = None,
                  trajectory_thin: int = 1) -> dict:
    """Write the deterministic bundle file set; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policies").mkdir(exist_ok=True)
    (out / "flow").mkdir(exist_ok=True)
    sol = result.solution
    grid = sol.grid
    files = []

    write_scenario(scn, out / "scenario.json")
    files.append("scenario.json")

    with open(out / "plan.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "route", "lambda", "J"])
        for idx in sol.plan.indices():
            i, j = idx[0], idx[1]
            r = idx[2] if len(idx) == 3 else 0
            writer.writerow([i, j, r, _fmt(sol.plan.lam[idx]),
                             _fmt(sol.policies[idx].cost)])
    files.append("plan.csv")

    with open(out / "iterations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "j_ot"])
        for it, j in enumerate(result.iterations):
            writer.writerow([it, _fmt(j)])
    files.append("iterations.csv")

    for idx in sol.plan.indices():
        i, j = idx[0], idx[1]
        r = idx[2] if len(idx) == 3 else 0
        rel = f"policies/policy_{i}_{j}_{r}.csv"
        write_policy_csv(sol.policies[idx], grid, out / rel)
        files.append(rel)

    with open(out / "meanfield.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["knot", "time"] + [f"xbar_{b}" for b in range(scn.sys.n)])
        for k in range(grid.count):
            writer.writerow([k, _fmt(grid.knots[k])]
                            + [_fmt(v) for v in result.mean_trajectory[k]])
    files.append("meanfield.csv")

    stride = max(1, (grid.count - 1) // (FLOW_SNAPSHOTS - 1))
    snapshot_knots = sorted(set(range(0, grid.count, stride)) | {grid.count - 1})
    for k in snapshot_knots:
        rel = f"flow/flow_{k:04d}.csv"
        write_flow_csv(sol, k, out / rel)
        files.append(rel)

    if run is not None:
        write_trajectories_csv(run, grid, out / "trajectories.csv",
                               thin=trajectory_thin)
        files.append("trajectories.csv")

    summary = _summary_dict(scn, result, run, metrics, gap)
    summary["files"] = sorted(files)
    summary["timings_ref"] = "timings.json" if timings else None
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                      encoding="utf-8")
    files.append("summary.json")

    manifest = {"files": {rel: _sha256(out / rel) for rel in sorted(files)}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                       encoding="utf-8")
    if timings:
        (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n",
                                          encoding="utf-8")
    return manifest


def _summary_dict(scn, result, run, metrics, gap) -> dict:
    sol = result.solution
    summary = {
        "name": scn.name,
        "status": result.status,
        "knots": sol.grid.count,
        "plan_shape": list(sol.plan.lam.shape),
        "cost_upper_bound": sol.bound,
        "iterations": list(result.iterations),
        "prop1_residual": result.prop1_residual,
    }
    if metrics is not None:
        summary["simulation"] = {
            "agents": run.agent_count if run is not None else None,
            "seed": run.seed if run is not None else None,
            "total_cost": metrics.j_hat,
            "total_cost_stderr": metrics.j_stderr,
            "max_violation": metrics.max_violation,
            "terminal_mean_errors": list(metrics.terminal_mean_errors),
            "terminal_frequencies": list(metrics.terminal_frequencies),
            "bound_holds": bool(metrics.j_hat
                                <= sol.bound + 3.0 * metrics.j_stderr),
        }
    if gap is not None:
        summary["gap"] = gap
    return summary


def update_summary(out_dir, **sections) -> None:
    """Merge sections into an existing summary.json and refresh the manifest."""
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    summary.update(sections)
    listed = set(summary.get("files", []))
    for rel in ("trajectories.csv",):
        if (out / rel).exists():
            listed.add(rel)
    summary["files"] = sorted(listed)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                      encoding="utf-8")
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for rel in manifest["files"]:
        if (out / rel).exists():
            manifest["files"][rel] = _sha256(out / rel)
    extra = [p for p in ("trajectories.csv",) if (out / p).exists()
             and p not in manifest["files"]]
    for rel in extra:
        manifest["files"][rel] = _sha256(out / rel)
    manifest["files"] = dict(sorted(manifest["files"].items()))
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n",
                             encoding="utf-8")


# -- reading a solved bundle back -------------------------------------------

def read_solution(out_dir):
    """Reconstruct (Scenario, MfsbResult-shaped data) from a bundle directory."""
    out = Path(out_dir)
    scn = parse_scenario(out / "scenario.json")
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    shape = tuple(summary["plan_shape"])

    lam = np.zeros(shape)
    costs = np.zeros(shape)
    with open(out / "plan.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            idx = (int(row["i"]), int(row["j"]))
            if len(shape) == 3:
                idx = idx + (int(row["route"]),)
            lam[idx] = float(row["lambda"])
            costs[idx] = float(row["J"])
    plan = TransportPlan(lam=lam, alpha0=scn.rho0.weights, alpha1=scn.rho1.weights,
                         costs=costs, objective=float(np.sum(lam * costs)))

    T, n, m = scn.grid.count, scn.sys.n, scn.sys.m
    policies = {}
    for idx in plan.indices():
        i, j = idx[0], idx[1]
        r = idx[2] if len(idx) == 3 else 0
        policies[idx] = _read_policy_csv(
            out / "policies" / f"policy_{i}_{j}_{r}.csv", T, n, m,
            cost=costs[idx])

    xbar = np.zeros((T, n))
    with open(out / "meanfield.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            k = int(row["knot"])
            xbar[k] = [float(row[f"xbar_{b}"]) for b in range(n)]

    meanfield_traj = xbar if scn.sys.has_meanfield else np.zeros((T, n))
    sol = MixtureSolution(plan=plan, policies=policies, grid=scn.grid,
                          meanfield_trajectory=meanfield_traj,
                          bound=float(np.sum(lam * costs)))
    result = MfsbResult(solution=sol, mean_trajectory=xbar, mean_control=None,
                        iterations=list(summary.get("iterations", [])),
                        status=summary.get("status", "optimal"),
                        prop1_residual=summary.get("prop1_residual"))
    return scn, result


def _read_policy_csv(path, T, n, m, cost) -> ConditionalPolicy:
    K = np.empty((T, m, n))
    v = np.empty((T, m))
    mu = np.empty((T, n))
    Sigma = np.empty((T, n, n))
    tril = list(zip(*np.tril_indices(n)))
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.DictReader(fh)):
            K[k] = np.array([float(row[f"K_{a}_{b}"])
                             for a in range(m) for b in range(n)]).reshape(m, n)
            v[k] = [float(row[f"v_{a}"]) for a in range(m)]
            mu[k] = [float(row[f"mu_{b}"]) for b in range(n)]
            S = np.zeros((n, n))
            for i, j in tril:
                S[i, j] = S[j, i] = float(row[f"Sigma_{i}_{j}"])
            Sigma[k] = S
    return ConditionalPolicy(K=K, v=v, mu=mu, Sigma=Sigma, cost=cost)
