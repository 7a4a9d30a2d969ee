import dataclasses
import json

import numpy as np
import pytest

from ricci_holonomy.catalog import HolonomyDescriptor, LineSegment, get_model
from ricci_holonomy.checks import (
    CHECKS,
    CheckReport,
    Residual,
    ToleranceSet,
    check_ambrose_singer,
    check_curvature_identities,
    check_flow_invariants,
    check_full_holonomy,
    check_holonomy_velocity,
    check_structure_constancy,
    check_transport_evolution,
    sample_points,
)
from ricci_holonomy.flow import integrate_flow, integrate_uhlenbeck
from ricci_holonomy.transport import AlgebraEstimate


def test_residual_pass_rule():
    assert Residual("a", 0.5, 1.0).passed
    assert not Residual("a", 1.0, 1.0).passed
    assert not Residual("a", float("nan"), 1.0).passed
    assert not Residual("a", float("inf"), np.inf).passed


def test_verdicts():
    ok, bad = Residual("a", 0.0, 1.0), Residual("b", 2.0, 1.0)
    assert CheckReport("x", "m", {}, [ok]).verdict == "pass"
    assert CheckReport("x", "m", {}, [ok, bad]).verdict == "fail"
    assert CheckReport("x", "m", {}, []).verdict == "warning"
    rep = CheckReport("x", "m", {"arr": np.arange(3.0)}, [ok], info={"flag": np.bool_(True), "n": np.int64(3)})
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["parameters"]["arr"] == [0.0, 1.0, 2.0] and d["info"] == {"flag": True, "n": 3}
    assert rep.residual("a") is ok
    with pytest.raises(KeyError):
        rep.residual("zzz")


def test_tolerance_set():
    tol = ToleranceSet({"membership": 1e-3}, scale=10.0)
    assert tol("membership", 1e-6) == pytest.approx(1e-2)
    assert tol("other", 1e-6) == pytest.approx(1e-5)
    assert ToleranceSet({"default": 1e-20})("anything", 1.0) == 1e-20


def test_check_ids():
    assert CHECKS == (
        "curvature_identities",
        "flow_invariants",
        "ambrose_singer",
        "transport_evolution",
        "holonomy_velocity",
        "full_holonomy",
        "structure_constancy",
    )


def test_sample_points_are_deterministic_and_inside():
    m = get_model("su2_x_s1")
    a, b = sample_points(m, 6, seed=4), sample_points(m, 6, seed=4)
    assert np.array_equal(a, b)
    box = m.chart_box
    width = box[:, 1] - box[:, 0]
    assert np.all(a >= box[:, 0] + 0.1 * width - 1e-15) and np.all(a <= box[:, 1] - 0.1 * width + 1e-15)


@pytest.fixture(scope="module")
def sphere():
    m = get_model("round_sphere")
    flow = integrate_flow(m, [0.8], 0.4, t0=0.1)
    return m, flow, integrate_uhlenbeck(flow)


def test_checks_are_pure(sphere):
    m, flow, frame = sphere
    a = check_full_holonomy(m, flow, frame, [m.loops["latitude"]], [0.0, 0.3], steps=200).to_dict()
    b = check_full_holonomy(m, flow, frame, [m.loops["latitude"]], [0.0, 0.3], steps=200).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["verdict"] == "pass"


def test_curvature_and_flow_checks_on_sphere(sphere):
    m, flow, frame = sphere
    rep = check_curvature_identities(m, flow, [0.0, 0.2], sample_points(m, 2))
    assert rep.verdict == "pass"
    rep = check_flow_invariants(m, flow, frame)
    assert rep.verdict == "pass"
    assert rep.residual("einstein_scalar_psi").value < 1e-8


def test_non_einstein_flow_check_notes_skip():
    m = get_model("s2_x_s1")
    flow = integrate_flow(m, m.default_theta, 0.1, t0=0.05)
    rep = check_flow_invariants(m, flow)
    assert rep.verdict == "pass"
    assert any("Einstein" in n for n in rep.notes)
    with pytest.raises(KeyError):
        rep.residual("einstein_scalar_psi")


def test_full_holonomy_preconditions(sphere):
    m, flow, frame = sphere
    with pytest.raises(ValueError, match="before and after"):
        check_full_holonomy(m, flow, frame, [m.loops["latitude"]], [0.2, 0.3])
    with pytest.raises(ValueError):
        check_full_holonomy(m, flow, frame, [m.loops["latitude"]], [0.0, 0.5])
    # sphere has the wrap_phi deck; a loop without any deck junction is rejected
    with pytest.raises(ValueError, match="deck"):
        check_full_holonomy(m, flow, frame, [m.loops["triangle"]], [0.0, 0.3])


def test_full_holonomy_detects_a_wrong_descriptor(sphere):
    m, flow, frame = sphere
    wrong = dataclasses.replace(m, holonomy=HolonomyDescriptor("trivial", 0))
    rep = check_full_holonomy(wrong, flow, frame, [m.loops["latitude"]], [0.0, 0.3], steps=200)
    assert rep.verdict == "fail"
    assert rep.residual("membership").value > 1.0


def test_holonomy_velocity_detects_a_missing_algebra():
    m = get_model("berger_su2")
    flow = integrate_flow(m, m.default_theta, 0.2, t0=0.1)
    frame = integrate_uhlenbeck(flow)
    loop = m.loops["phi_circle"]
    times = np.linspace(0.0, 0.2, 5)
    empty = AlgebraEstimate([], "test")
    rep = check_holonomy_velocity(m, flow, frame, loop, times, algebra=empty, steps=400)
    assert rep.verdict == "fail" and not rep.info["vacuous_B"]
    with pytest.raises(ValueError):
        check_holonomy_velocity(m, flow, frame, loop, times[:3])


def test_transport_evolution_preconditions(sphere):
    m, flow, _ = sphere
    seg = LineSegment(m.basepoint, m.basepoint + [0.2, 0.3])
    with pytest.raises(ValueError):
        check_transport_evolution(m, flow, seg, 0.1, h_t=0.5)
    with pytest.raises(ValueError):
        check_transport_evolution(m, flow, seg, 0.0, h_t=1e-3)
    rep = check_transport_evolution(m, flow, seg, 0.2, steps=100)
    assert rep.verdict == "pass"
    assert "decay_ratio" not in rep.info and rep.notes


def test_ambrose_singer_on_sphere(sphere):
    m, flow, _ = sphere
    rep = check_ambrose_singer(m, flow, 0.1, points=sample_points(m, 2))
    assert rep.verdict == "pass"
    assert 1.5 < rep.info["error_ratio"] < 2.5


def test_structure_constancy_not_applicable_is_a_warning():
    m = get_model("berger_su2")
    flow = integrate_flow(m, m.default_theta, 0.1, t0=0.05)
    rep = check_structure_constancy(m, flow, integrate_uhlenbeck(flow))
    assert rep.verdict == "warning" and rep.residuals == []


def test_tight_tolerance_turns_pass_into_fail(sphere):
    m, flow, frame = sphere
    rep = check_flow_invariants(m, flow, frame, tolerances=ToleranceSet(scale=1e-30))
    assert rep.verdict == "fail"
