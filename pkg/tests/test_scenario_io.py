import json

import numpy as np
import pytest

from mfsb.cli import bundled_scenario_path
from mfsb.errors import SchemaError
from mfsb.meanfield import solve_unconstrained
from mfsb.scenario_io import (parse_scenario, read_solution, scenario_to_dict,
                              write_results, write_scenario)

MINIMAL = {
    "grid": {"knots": 11},
    "system": {"n": 2, "m": 2, "q": 2,
               "A": [[0.0, 0.0], [0.0, 0.0]],
               "B": [[1.0, 0.0], [0.0, 1.0]],
               "D": [[1.0, 0.0], [0.0, 1.0]]},
    "rho0": [{"weight": 1.0, "mean": [0.0, 0.0],
              "cov_lower_triangle": [1.0, 0.0, 1.0]}],
    "rho1": [{"weight": 1.0, "mean": [1.0, 0.0],
              "cov_lower_triangle": [1.0, 0.0, 1.0]}],
}


def write_doc(tmp_path, doc, name="scn.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_minimal_scenario_parses(tmp_path):
    scn = parse_scenario(write_doc(tmp_path, MINIMAL))
    assert scn.sys.n == 2
    assert scn.grid.count == 11
    assert len(scn.routes) == 1 and scn.routes[0].name == "direct"
    assert not scn.constrained


def test_weights_renormalized_within_tolerance(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["rho0"] = [
        {"weight": 0.5, "mean": [0.0, 0.0], "cov_lower_triangle": [1.0, 0.0, 1.0]},
        {"weight": 0.5000001, "mean": [1.0, 1.0],
         "cov_lower_triangle": [1.0, 0.0, 1.0]},
    ]
    scn = parse_scenario(write_doc(tmp_path, doc))
    assert scn.rho0.weights.sum() == pytest.approx(1.0, abs=1e-12)
    doc["rho0"][1]["weight"] = 0.6
    with pytest.raises(SchemaError, match="weights sum"):
        parse_scenario(write_doc(tmp_path, doc))


def test_missing_field_names_json_path(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    del doc["system"]["B"]
    with pytest.raises(SchemaError, match="system.B"):
        parse_scenario(write_doc(tmp_path, doc))


def test_non_pd_covariance_names_component(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["rho1"][0]["cov_lower_triangle"] = [1.0, 2.0, 1.0]
    with pytest.raises(SchemaError, match=r"rho1\[0\]"):
        parse_scenario(write_doc(tmp_path, doc))


def test_bad_json_is_schema_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        parse_scenario(path)


def test_round_trip_equivalence(tmp_path):
    src = parse_scenario(bundled_scenario_path("problem2_like_mid"))
    out = tmp_path / "copy.json"
    write_scenario(src, out)
    dup = parse_scenario(out)
    assert dup.grid.count == src.grid.count
    np.testing.assert_allclose(dup.sys.A, src.sys.A, atol=1e-12)
    np.testing.assert_allclose(dup.sys.Abar, src.sys.Abar, atol=1e-12)
    np.testing.assert_allclose(dup.rho0.weights, src.rho0.weights, atol=1e-12)
    for a, b in zip(dup.rho0.components, src.rho0.components):
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)
    assert len(dup.obstacles) == len(src.obstacles)
    for oa, ob in zip(dup.obstacles, src.obstacles):
        for fa, fb in zip(oa.faces, ob.faces):
            np.testing.assert_allclose(fa.a, fb.a, atol=1e-12)
            assert fa.beta == pytest.approx(fb.beta, abs=1e-12)
    assert [r.face_choice for r in dup.routes] == [r.face_choice for r in src.routes]
    assert dup.chance.total_budget == src.chance.total_budget
    assert dup.chance.window == src.chance.window
    # serialization is canonical: a second round trip is byte-identical
    out2 = tmp_path / "copy2.json"
    write_scenario(dup, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_full_precision_serialization(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    ugly = 0.1 + 0.2 / 7.0
    doc["rho0"][0]["mean"] = [ugly, -ugly]
    scn = parse_scenario(write_doc(tmp_path, doc))
    write_scenario(scn, tmp_path / "rt.json")
    again = parse_scenario(tmp_path / "rt.json")
    assert again.rho0.components[0].mean[0] == ugly


@pytest.fixture(scope="module")
def solved_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    scn = parse_scenario(bundled_scenario_path("gmm3to2"))
    result = solve_unconstrained(scn)
    manifest = write_results(scn, result, out, timings={"solve_seconds": 1.0})
    return scn, result, out, manifest


def test_bundle_file_set(solved_bundle):
    _, _, out, manifest = solved_bundle
    for rel in ("summary.json", "plan.csv", "iterations.csv", "meanfield.csv",
                "scenario.json"):
        assert rel in manifest["files"]
        assert (out / rel).is_file()
    assert (out / "manifest.json").is_file()
    assert (out / "timings.json").is_file()
    assert "timings.json" not in manifest["files"]
    assert any(rel.startswith("policies/") for rel in manifest["files"])
    assert any(rel.startswith("flow/") for rel in manifest["files"])


def test_summary_consistent_with_plan_csv(solved_bundle):
    _, result, out, _ = solved_bundle
    summary = json.loads((out / "summary.json").read_text())
    total = 0.0
    for line in (out / "plan.csv").read_text().splitlines()[1:]:
        _, _, _, lam, cost = line.split(",")
        total += float(lam) * float(cost)
    assert summary["cost_upper_bound"] == pytest.approx(total, abs=1e-8)
    assert summary["cost_upper_bound"] == pytest.approx(result.solution.bound,
                                                        abs=1e-12)


def test_read_solution_round_trip(solved_bundle):
    scn, result, out, _ = solved_bundle
    scn2, result2 = read_solution(out)
    assert scn2.sys.n == scn.sys.n
    np.testing.assert_allclose(result2.solution.plan.lam,
                               result.solution.plan.lam, atol=1e-12)
    assert result2.solution.bound == pytest.approx(result.solution.bound,
                                                   rel=1e-12)
    for idx in result.solution.plan.indices():
        a = result.solution.policies[idx]
        b = result2.solution.policies[idx]
        np.testing.assert_allclose(a.K, b.K, atol=1e-12)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-12)
        np.testing.assert_allclose(a.Sigma, b.Sigma, atol=1e-12)
    np.testing.assert_allclose(result2.mean_trajectory, result.mean_trajectory,
                               atol=1e-12)


def test_rewrite_is_byte_identical(tmp_path, solved_bundle):
    scn, result, out, manifest = solved_bundle
    out2 = tmp_path / "again"
    manifest2 = write_results(scn, result, out2, timings={"solve_seconds": 99.0})
    assert manifest == manifest2
    for rel in manifest["files"]:
        assert (out / rel).read_bytes() == (out2 / rel).read_bytes()


def test_scenario_dict_omits_defaults():
    scn = parse_scenario(bundled_scenario_path("gmm3to2"))
    doc = scenario_to_dict(scn)
    assert "obstacles" not in doc
    assert "chance" not in doc
