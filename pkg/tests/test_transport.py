import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ricci_holonomy.catalog import LineSegment, LoopPath, catalog_models, get_model, polyline_loop
from ricci_holonomy.errors import DomainError
from ricci_holonomy.flow import integrate_flow
from ricci_holonomy.transport import (
    curvature_span_algebra,
    smallloop_algebra,
    span_basis,
    transport_loop,
    transport_segment,
)
from ricci_holonomy.checks import sample_points

LOOPS = [(m.name, label) for m in catalog_models() for label in m.loops]


def sphere_latitude_oracle(colat, steps_tol=1e-12):
    """Transport around a latitude of the unit sphere from the hand ODE, by scipy."""
    s, c = np.sin(colat), np.cos(colat)

    def rhs(_, y):
        v = y.reshape(2, 2)
        # dV^theta = sin cos V^phi dphi, dV^phi = -cot V^theta dphi
        return np.array([s * c * v[1], -(c / s) * v[0]]).ravel()

    sol = solve_ivp(rhs, (0.0, 2 * np.pi), np.eye(2).ravel(), rtol=steps_tol, atol=steps_tol, method="DOP853")
    return sol.y[:, -1].reshape(2, 2)


def latitude(colat):
    q = np.array([colat, 0.0])
    deck = get_model("round_sphere").deck_transforms["wrap_phi"]
    return LoopPath(q, [LineSegment(q, q + [0.0, 2 * np.pi])], [deck], label="lat")


def test_flat_loops_are_trivial():
    for name in ("flat_torus_2", "flat_torus_3", "kaehler_flat_t4"):
        m = get_model(name)
        for loop in m.loops.values():
            res = transport_loop(m, None, 0.0, loop, theta=m.default_theta)
            assert np.abs(res.map - np.eye(m.dim)).max() < 1e-10


def test_klein_deck_loop_is_a_reflection():
    m = get_model("klein_bottle")
    loop = m.loops["deck_x"]
    # oracle: segment transports are trivial, so only the deck differentials act
    expected = np.eye(2)
    point = loop.basepoint
    for kind, obj in loop.items():
        if kind == "deck":
            expected = obj.differential(point) @ expected
            point = obj(point)
        else:
            point = obj.end
    assert np.array_equal(expected, np.diag([1.0, -1.0]))
    res = transport_loop(m, None, 0.0, loop, theta=[1.0, 2.0])
    assert np.abs(res.map - expected).max() < 1e-10


def test_sphere_latitude_rotates_by_pi():
    m = get_model("round_sphere")
    res = transport_loop(m, None, 0.0, m.loops["latitude"], theta=[1.0])
    e = np.diag([1.0, 1.0 / np.sin(np.pi / 3)])
    assert np.abs(np.linalg.inv(e) @ res.map @ e + np.eye(2)).max() < 1e-8
    assert res.orthogonality_residual < 1e-10 and not res.flagged


@pytest.mark.parametrize("colat", [0.7, 1.0, 2.2])
def test_sphere_latitude_against_independent_integrator(colat):
    m = get_model("round_sphere")
    res = transport_loop(m, None, 0.0, latitude(colat), theta=[1.0])
    oracle = sphere_latitude_oracle(colat)
    assert np.abs(res.map - oracle).max() < 1e-9
    # enclosed-area angle in an orthonormal frame
    e = np.diag([1.0, 1.0 / np.sin(colat)])
    rot = np.linalg.inv(e) @ res.map @ e
    angle = -2 * np.pi * np.cos(colat)
    assert np.abs(rot - [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]).max() < 1e-8


@pytest.mark.parametrize("name,label", LOOPS)
def test_canonical_loops_are_orthogonal_and_reversible(name, label):
    m = get_model(name)
    loop = m.loops[label]
    fwd = transport_loop(m, None, 0.0, loop, theta=m.default_theta, steps=400)
    back = transport_loop(m, None, 0.0, loop.reversed(), theta=m.default_theta, steps=400)
    assert fwd.orthogonality_residual < 1e-6
    assert np.abs(back.map @ fwd.map - np.eye(m.dim)).max() < 1e-8


@pytest.mark.parametrize("name", ["round_sphere", "berger_su2", "kaehler_s2_x_t2"])
def test_homothety_invariance(name):
    m = get_model(name)
    th = np.asarray(m.default_theta, float)
    loop = next(iter(m.loops.values()))
    a = transport_loop(m, None, 0.0, loop, theta=th, steps=400).map
    b = transport_loop(m, None, 0.0, loop, theta=2.5 * th, steps=400).map
    assert np.abs(a - b).max() < 1e-8


def test_einstein_flow_leaves_transport_unchanged():
    m = get_model("round_sphere")
    flow = integrate_flow(m, [1.0], 0.4)
    a = transport_loop(m, flow, 0.0, m.loops["triangle"], steps=400).map
    b = transport_loop(m, flow, 0.35, m.loops["triangle"], steps=400).map
    assert np.abs(a - b).max() < 1e-8


def test_deck_junction_commutes_with_a_trivial_segment():
    m = get_model("reflection_mapping_torus")
    loop = m.loops["deck_z"]
    seg0, seg1 = loop.segments
    deck = loop.junction_decks[0]
    here, there = seg0.end, deck(seg0.end)
    before = LoopPath(loop.basepoint, [seg0, LineSegment(there, there), seg1], [deck, None, None])
    after = LoopPath(loop.basepoint, [seg0, LineSegment(here, here), seg1], [None, deck, None])
    th = m.default_theta
    a = transport_loop(m, None, 0.0, before, theta=th, steps=400).map
    b = transport_loop(m, None, 0.0, after, theta=th, steps=400).map
    c = transport_loop(m, None, 0.0, loop, theta=th, steps=400).map
    assert np.abs(a - b).max() < 1e-10 and np.abs(a - c).max() < 1e-10


def test_segment_error_estimate_shrinks():
    m = get_model("berger_su2")
    seg = LineSegment(m.basepoint, m.basepoint + [0.3, -0.2, 0.5])
    _, e1 = transport_segment(m, m.default_theta, seg, 20)
    _, e2 = transport_segment(m, m.default_theta, seg, 40)
    assert 0 < e2 < e1 / 10


def test_loop_leaving_the_chart():
    m = get_model("round_sphere")
    q = m.basepoint
    loop = polyline_loop(q, [q + [-1.1, 0.0], q + [-1.1, 0.5]], "pole")
    with pytest.raises(DomainError):
        transport_loop(m, None, 0.0, loop, theta=[1.0])


# --------------------------------------------------------------------------
# algebra estimates


def test_small_loops_flat():
    m = get_model("flat_torus_3")
    est = smallloop_algebra(m, None, 0.0, theta=m.default_theta)
    assert est.rank == 0 and est.details["total_error"] == 0.0


def test_small_loops_sphere_generator():
    m = get_model("round_sphere")
    est = smallloop_algebra(m, None, 0.0, theta=[1.0])
    assert est.rank == 1
    gen = est.details["generators"][(0, 1)]
    curv = est.details["curvature"][(0, 1)]
    u, v = gen / np.linalg.norm(gen), curv / np.linalg.norm(curv)
    assert min(np.linalg.norm(u - v), np.linalg.norm(u + v)) < 1e-2
    assert est.details["errors"][(0, 1)] < 1e-2 * np.linalg.norm(curv)


def test_small_loops_first_order_convergence():
    m = get_model("berger_su2")
    a = smallloop_algebra(m, None, 0.0, eps=1e-2, theta=m.default_theta)
    b = smallloop_algebra(m, None, 0.0, eps=5e-3, theta=m.default_theta)
    assert a.rank == b.rank == 3
    assert 1.5 < a.details["total_error"] / b.details["total_error"] < 2.5


def test_small_loops_product_has_flat_circle_block():
    m = get_model("s2_x_s1")
    est = smallloop_algebra(m, None, 0.0, theta=m.default_theta)
    assert est.rank == 1
    for gen in est.details["generators"].values():
        assert np.abs(gen[2, :]).max() < 1e-8 and np.abs(gen[:, 2]).max() < 1e-8


def test_large_square_asks_to_halve():
    m = get_model("round_sphere")
    with pytest.raises(DomainError, match="halve"):
        smallloop_algebra(m, None, 0.0, eps=1.0, theta=[1.0])


@pytest.mark.parametrize(
    "name,rank", [("flat_torus_2", 0), ("kaehler_flat_t4", 0), ("kaehler_s2_x_t2", 1), ("berger_su2", 3), ("s2_x_s1", 1)]
)
def test_curvature_span_rank(name, rank):
    m = get_model(name)
    est = curvature_span_algebra(m, None, 0.0, sample_points(m, 3), theta=m.default_theta, steps=400)
    assert est.rank == rank
    assert est.details["closed"]


def test_span_basis_tolerances():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert span_basis([], 1e-8, 1e-10) == []
    assert span_basis([1e-12 * rot], 1e-8, 1e-10) == []
    assert len(span_basis([rot, rot + 1e-12 * np.eye(2)], 1e-8, 1e-10)) == 1
    assert len(span_basis([rot, np.eye(2)], 1e-8, 1e-10)) == 2
