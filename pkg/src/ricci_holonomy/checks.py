"""Numerical checks with named residuals and pass/fail verdicts.

Every check returns a :class:`CheckReport`.  A residual passes when its value
is strictly below its tolerance; the verdict is ``pass`` iff all residuals
pass.  Tolerances come from per-check defaults, optionally replaced through a
:class:`ToleranceSet` (named overrides, a ``default`` override, and a global
scale factor).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .catalog import LineSegment, block_determinant, holonomy_membership
from .flow import (
    evolve_parallel_tensor,
    integrate_flow,
    integrate_uhlenbeck,
    push_pull,
    rk4_linear_propagators,
)
from .geometry import christoffel_dot, curvature_at, engine_for, pack_invariants
from .tensor_kernel import MultiTensor, antisymmetry_residual, project_onto_span
from .transport import (
    curvature_span_algebra,
    segment_frames,
    smallloop_algebra,
    transport_loop,
)

__all__ = [
    "Residual",
    "CheckReport",
    "ToleranceSet",
    "CHECKS",
    "sample_points",
    "check_curvature_identities",
    "check_flow_invariants",
    "check_ambrose_singer",
    "check_transport_evolution",
    "check_holonomy_velocity",
    "check_full_holonomy",
    "check_structure_constancy",
]

log = logging.getLogger(__name__)

VACUOUS_B = 1e-6


@dataclass
class Residual:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)


@dataclass
class ToleranceSet:
    """Named tolerance overrides plus a multiplicative scale."""

    overrides: dict = field(default_factory=dict)
    scale: float = 1.0

    def __call__(self, name: str, default: float) -> float:
        return float(self.overrides.get(name, self.overrides.get("default", default))) * self.scale


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class CheckReport:
    """Residuals of one check on one model.

    ``verdict`` is ``pass`` iff every residual is below its tolerance, ``fail``
    otherwise, and ``warning`` for a check that produced no residuals (not
    applicable to the model).
    """

    check_id: str
    model: str
    parameters: dict
    residuals: list
    notes: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if not self.residuals:
            return "warning"
        return "pass" if all(r.passed for r in self.residuals) else "fail"

    def residual(self, name: str) -> Residual:
        for r in self.residuals:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "model": self.model,
            "parameters": _jsonable(self.parameters),
            "residuals": [
                {"name": r.name, "value": float(r.value), "tolerance": float(r.tolerance), "passed": r.passed}
                for r in self.residuals
            ],
            "verdict": self.verdict,
            "notes": list(self.notes),
            "info": _jsonable(self.info),
        }


def _tols(tolerances) -> ToleranceSet:
    if tolerances is None:
        return ToleranceSet()
    if isinstance(tolerances, ToleranceSet):
        return tolerances
    return ToleranceSet(dict(tolerances))


def sample_points(model, count: int = 4, seed: int = 0, spread: float = 0.15) -> np.ndarray:
    """Deterministic chart points scattered around the basepoint.

    Points are kept a tenth of the chart width away from its edges, where
    coordinate singularities make transport stiff.
    """
    rng = np.random.default_rng(seed)
    box = np.asarray(model.chart_box, float)
    lo, hi = box[:, 0], box[:, 1]
    pts = model.basepoint + spread * model.domain_scale * rng.standard_normal((count, model.dim))
    margin = 0.1 * (hi - lo)
    return np.clip(pts, lo + margin, hi - margin)


def _check_times(flow, times):
    times = np.asarray(times, float)
    if np.any(times < flow.t_start - 1e-12) or np.any(times > flow.T + 1e-12):
        raise ValueError(f"check times must lie in [{flow.t_start}, {flow.T}]")
    return times


# --------------------------------------------------------------------------
# curvature and flow bookkeeping


def check_curvature_identities(model, flow, times, points=None, tolerances=None) -> CheckReport:
    """Symmetries and Bianchi identities of the curvature, plus d(Gamma)/dt consistency."""
    tol = _tols(tolerances)
    times = _check_times(flow, times)
    pts = [model.basepoint] + ([] if points is None else list(points))
    worst: dict[str, float] = {}
    dot = 0.0
    for t in times:
        th = flow.at(t)
        for x in pts:
            for name, value in pack_invariants(curvature_at(model, x, th)).items():
                worst[name] = max(worst.get(name, 0.0), value)
        dot = max(dot, christoffel_dot(model, model.basepoint, th)[1])
    res = [Residual(k, v, tol(k, 1e-8)) for k, v in sorted(worst.items())]
    res.append(Residual("christoffel_rate_consistency", dot, tol("christoffel_rate_consistency", 1e-6)))
    return CheckReport("curvature_identities", model.name, {"times": times, "points": pts}, res)


def check_flow_invariants(model, flow, frame=None, tolerances=None) -> CheckReport:
    """ODE residual, time reversal, psi composition, isometry, Einstein scaling."""
    tol = _tols(tolerances)
    notes = []
    T = flow.T
    q = model.basepoint
    probes = 0.5 * (flow.times[:-1] + flow.times[1:])[:: max(1, len(flow.times) // 50)]
    res = [Residual("ode_residual", flow.ode_residual(probes), tol("ode_residual", 1e-7))]

    fwd = integrate_flow(model, flow.at(flow.t_start), T, t0=flow.t_start)
    back = integrate_flow(model, fwd.thetas[-1], T, t0=T)
    scale = max(1.0, float(np.linalg.norm(flow.at(flow.t_start))))
    res.append(
        Residual(
            "time_reversal_theta",
            float(np.linalg.norm(back.thetas[0] - fwd.thetas[0]) / scale),
            tol("time_reversal_theta", 1e-8),
        )
    )
    f0 = integrate_uhlenbeck(fwd, q, fwd.t_start)
    fT = integrate_uhlenbeck(back, q, T)
    eye = np.eye(model.dim)
    res.append(
        Residual("time_reversal_iota", float(np.linalg.norm(fT.iotas[0] @ f0.iotas[-1] - eye)), tol("time_reversal_iota", 1e-8))
    )
    k1 = len(fwd.times) // 2
    t1 = float(fwd.times[k1])
    f1 = integrate_uhlenbeck(fwd, q, t1)
    comp = np.linalg.norm(f0.iotas[-1] - f1.iotas[-1] @ f0.iotas[k1])
    res.append(Residual("psi_composition", float(comp), tol("psi_composition", 1e-8)))

    frame = integrate_uhlenbeck(flow, q) if frame is None else frame
    res.append(Residual("isometry", frame.isometry_residual(flow), tol("isometry", 1e-7)))
    if model.einstein:
        g0 = model.g(q, flow.at(frame.t0))
        worst = 0.0
        for t, iota in zip(frame.times, frame.iotas):
            c = model.g(q, flow.at(t))[0, 0] / g0[0, 0]
            worst = max(worst, float(np.linalg.norm(iota - eye / np.sqrt(c))))
        res.append(Residual("einstein_scalar_psi", worst, tol("einstein_scalar_psi", 1e-8)))
    else:
        notes.append("not Einstein: scalar-psi property not applicable")
    params = {"T": T, "t0": flow.t0, "t1": t1, "grid_size": len(flow.times)}
    return CheckReport("flow_invariants", model.name, params, res, notes, {"flow_error_estimate": flow.error_estimate})


# --------------------------------------------------------------------------
# holonomy algebra


def _mutual_projection(a, b) -> float:
    if not a and not b:
        return 0.0
    if not a or not b:
        return 1.0
    worst = max(project_onto_span(x, b)[1] for x in a)
    return max(worst, max(project_onto_span(x, a)[1] for x in b))


def check_ambrose_singer(model, flow, t, eps=(1e-2, 5e-3), points=None, tolerances=None) -> CheckReport:
    """Small-loop generators against curvature endomorphisms and the curvature span."""
    tol = _tols(tolerances)
    q = model.basepoint
    g = model.g(q, flow.at(t))
    ests = [smallloop_algebra(model, flow, t, q, e) for e in eps]
    pts = sample_points(model) if points is None else points
    span = curvature_span_algebra(model, flow, t, pts, q)
    expected = model.holonomy.algebra_dim
    res = [
        Residual("small_loop_rank_mismatch", float(abs(ests[0].rank - expected)), tol("small_loop_rank_mismatch", 0.5)),
        Residual("curvature_span_rank_mismatch", float(abs(span.rank - expected)), tol("curvature_span_rank_mismatch", 0.5)),
        Residual("span_agreement", _mutual_projection(ests[0].basis, span.basis), tol("span_agreement", 1e-3)),
    ]
    anti = max([antisymmetry_residual(b, g) for e in ests for b in e.basis] + [0.0])
    res.append(Residual("basis_antisymmetry", anti, tol("basis_antisymmetry", 1e-6)))
    errors = [e.details["total_error"] for e in ests]
    info = {"ranks": [e.rank for e in ests], "curvature_span_rank": span.rank, "generator_errors": errors}
    notes = []
    if errors[0] > 1e-9:
        ratio = errors[0] / errors[1]
        info["error_ratio"] = ratio
        expect = eps[0] / eps[1]
        res.append(Residual("first_order_deviation", abs(ratio - expect), tol("first_order_deviation", 0.25 * expect)))
    else:
        notes.append("no curvature at the basepoint: convergence order not applicable")
        res.append(Residual("generator_error", errors[0], tol("generator_error", 1e-8)))
    if not span.details["closed"]:
        notes.append("curvature span did not close after two bracket rounds")
    params = {"t": t, "eps": list(eps), "q": q, "sample_points": pts}
    return CheckReport("ambrose_singer", model.name, params, res, notes, info)


# --------------------------------------------------------------------------
# evolution of transported frames


def _iota_along(model, flow, pts, t_from, t_to, substeps):
    """``iota`` at each point for time ``t_to`` with ``iota_{t_from} = Id``."""
    eng = engine_for(model)
    ts = np.linspace(t_from, t_to, substeps + 1)
    h = ts[1] - ts[0]
    out = np.broadcast_to(np.eye(model.dim), (len(pts), model.dim, model.dim)).copy()
    rc = [eng.ricci_endo_batch(pts, flow.at(s)) for s in ts]
    for k in range(substeps):
        mid = eng.ricci_endo_batch(pts, flow.at(ts[k] + 0.5 * h))
        out = rk4_linear_propagators(rc[k], mid, rc[k + 1], h) @ out
    return out


def _s_derivative(w, ds):
    """Fourth-order central difference in ``s`` at interior nodes ``2 .. N-2``."""
    return (w[:-4] - 8.0 * w[1:-3] + 8.0 * w[3:-1] - w[4:]) / (12.0 * ds)


def _evolution_mismatch(model, flow, seg, t, h, steps, substeps):
    s = np.linspace(0.0, 1.0, steps + 1)
    pts = seg.point(s)
    vel = seg.velocity(s)
    q = pts[0]
    frame0 = np.linalg.inv(np.linalg.cholesky(model.g(q, flow.at(t))).T)
    vs = []
    for tau in (t - h, t + h):
        p = segment_frames(model, flow.at(tau), seg, steps)
        iota = _iota_along(model, flow, pts, t, tau, substeps)
        vs.append(np.linalg.solve(iota, p @ (iota[0] @ frame0)))
    w = (vs[1] - vs[0]) / (2.0 * h)
    th = flow.at(t)
    eng = engine_for(model)
    gam = eng.christoffel_batch(pts, th)
    conn = np.einsum("nkij,ni->nkj", gam, vel)
    lhs = _s_derivative(w, 1.0 / steps) + (conn @ w)[2:-2]
    v_t = segment_frames(model, th, seg, steps) @ frame0
    div = np.einsum("ni,nijk->njk", vel, eng.div_rm_batch(pts, th))
    rhs = -(div @ v_t)[2:-2]
    diff = np.linalg.norm(lhs - rhs, axis=(1, 2)).max()
    size = np.linalg.norm(rhs, axis=(1, 2)).max()
    return float(diff / max(1.0, size)), float(size)


def check_transport_evolution(
    model, flow, segment: LineSegment, t, h_t: float = 1e-3, steps: int = 400, substeps: int = 4, tolerances=None
) -> CheckReport:
    """Time derivative of pulled-back parallel frames against the curvature divergence.

    A g(t)-orthonormal frame at the segment start is transported with the
    pulled-back connections at ``t - h`` and ``t + h``; the covariant
    s-derivative of the central time difference is compared with
    ``-divRm(gamma') V``.  The pullback is anchored so that ``iota_t = Id``.
    The comparison is repeated at ``h/2``; when the sides are nonzero the
    ratio of the two mismatches should be near 4.
    """
    tol = _tols(tolerances)
    if not 1e-4 <= h_t <= 1e-2:
        raise ValueError("h_t must lie in [1e-4, 1e-2]")
    if t - h_t < flow.t_start - 1e-12 or t + h_t > flow.T + 1e-12:
        raise ValueError("t +- h_t must lie inside the flow range")
    model.check_point(segment.point(np.linspace(0, 1, 5)))
    r1, size = _evolution_mismatch(model, flow, segment, t, h_t, steps, substeps)
    r2, _ = _evolution_mismatch(model, flow, segment, t, 0.5 * h_t, steps, substeps)
    res = [Residual("evolution_mismatch", r1, tol("evolution_mismatch", 1e-3))]
    info = {"mismatch_half_step": r2, "rhs_size": size}
    notes = []
    if size > 1e-6:
        ratio = r1 / max(r2, 1e-300)
        info["decay_ratio"] = ratio
        res.append(Residual("second_order_deviation", abs(ratio - 4.0), tol("second_order_deviation", 1.0)))
    else:
        notes.append("curvature divergence vanishes along the segment: both sides are zero")
    params = {"t": t, "h_t": h_t, "steps": steps, "substeps": substeps, "segment": [segment.start, segment.end]}
    return CheckReport("transport_evolution", model.name, params, res, notes, info)


def check_holonomy_velocity(
    model, flow, frame, loop, times, algebra=None, delta: float = 5e-4, steps: int = 2000, tolerances=None
) -> CheckReport:
    """``B = P^-1 dP/dt`` for the pulled-back holonomy of one loop.

    ``B`` must be h-antisymmetric and lie in the holonomy algebra at ``t0``
    (``algebra`` is an :class:`AlgebraEstimate`; by default the curvature span
    at the frame anchor).  A zero ``B`` is reported through ``info["vacuous_B"]``.
    """
    tol = _tols(tolerances)
    times = _check_times(flow, times)
    if len(times) < 5:
        raise ValueError("need at least 5 grid times")
    times = np.clip(times, flow.t_start + delta, flow.T - delta)
    if algebra is None:
        algebra = curvature_span_algebra(model, flow, frame.t0, sample_points(model), frame.q)
    h = frame.h
    anti, span_res, norms = 0.0, 0.0, []
    for t in times:
        pm, p0, pp = (transport_loop(model, flow, s, loop, steps=steps, frame=frame).map for s in (t - delta, t, t + delta))
        b = np.linalg.solve(p0, (pp - pm) / (2.0 * delta))
        norms.append(float(np.linalg.norm(b)))
        anti = max(anti, antisymmetry_residual(b, h))
        span_res = max(span_res, project_onto_span(b, algebra.basis)[1] if algebra.basis else norms[-1] / max(1.0, norms[-1]))
    vacuous = max(norms) <= VACUOUS_B
    res = [
        Residual("b_antisymmetry", anti, tol("b_antisymmetry", 1e-5)),
        Residual("b_span_projection", span_res, tol("b_span_projection", 1e-3)),
    ]
    notes = ["B vanishes on the grid: the velocity statement holds vacuously"] if vacuous else []
    info = {"vacuous_B": bool(vacuous), "max_B_norm": max(norms), "B_norms": norms, "algebra_rank": algebra.rank}
    params = {"loop": loop.label, "times": times, "t0": frame.t0, "delta": delta, "steps": steps}
    return CheckReport("holonomy_velocity", model.name, params, res, notes, info)


def check_full_holonomy(model, flow, frame, loops, times, steps: int = 2000, tolerances=None) -> CheckReport:
    """Conjugated holonomy ``psi^-1 P(t) psi`` stays in the group fixed at ``t0``.

    Membership is tested against ``g(t0)`` and the parallel structures at
    ``t0``; grid times on both sides of ``t0`` are required.  The determinant
    of every descriptor block must also keep its ``t0`` value.
    """
    tol = _tols(tolerances)
    times = _check_times(flow, times)
    t0 = frame.t0
    if not (np.any(times < t0 - 1e-12) and np.any(times > t0 + 1e-12)):
        raise ValueError("full-holonomy check needs grid times before and after t0")
    if model.deck_transforms and not any(lp.initial_deck is not None or any(d is not None for d in lp.junction_decks) for lp in loops):
        raise ValueError("models with deck transforms need at least one loop crossing a deck junction")
    q = frame.q
    th0 = flow.at(t0)
    g0 = model.g(q, th0)
    structs = [(s.tag, s.at(q, th0)) for s in model.parallel_structures]
    desc = model.holonomy
    blocks = [tuple(b) for b in desc.blocks] or [tuple(range(model.dim))]
    member = {"backward": 0.0, "forward": 0.0}
    persist, orth = 0.0, 0.0
    per_loop = {}
    for loop in loops:
        ref = transport_loop(model, flow, t0, loop, steps=steps, frame=frame)
        dets0 = [block_determinant(ref.map, b) for b in blocks]
        worst = 0.0
        for t in times:
            r = transport_loop(model, flow, t, loop, steps=steps, frame=frame)
            m = holonomy_membership(desc, r.map, g0, structs)
            side = "backward" if t < t0 else "forward"
            member[side] = max(member[side], m)
            worst = max(worst, m)
            orth = max(orth, r.orthogonality_residual)
            persist = max(persist, max(abs(block_determinant(r.map, b) - d) for b, d in zip(blocks, dets0)))
        per_loop[loop.label] = {"membership": worst, "block_determinants_t0": dets0}
    res = [
        Residual("membership", max(member.values()), tol("membership", desc.tolerance)),
        Residual("component_persistence", persist, tol("component_persistence", 1e-6)),
        Residual("transport_orthogonality", orth, tol("transport_orthogonality", 1e-6)),
    ]
    info = {"membership_backward": member["backward"], "membership_forward": member["forward"], "loops": per_loop}
    params = {"loops": [lp.label for lp in loops], "times": times, "t0": t0, "steps": steps, "descriptor": desc.family}
    return CheckReport("full_holonomy", model.name, params, res, [], info)


def check_structure_constancy(model, flow, frame, tolerances=None) -> CheckReport:
    """Parallel structures carried by the fiberwise ODE stay fixed and keep their algebra."""
    tol = _tols(tolerances)
    q = frame.q
    t0 = frame.t0
    params = {"t0": t0, "grid_size": len(flow.times)}
    if not model.parallel_structures:
        return CheckReport("structure_constancy", model.name, params, [], ["model has no parallel structures"])
    eng = engine_for(model)
    thetas = flow.at(flow.times)
    rcs = eng.ricci_endo_over_theta(q, thetas)
    gs = np.array([model.g(q, th) for th in thetas])
    eye = np.eye(model.dim)
    th0 = flow.at(t0)
    worst: dict[str, float] = {}

    def bump(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    proj_traj = []
    for s in model.parallel_structures:
        s0 = s.at(q, th0)
        traj = evolve_parallel_tensor(flow, q, MultiTensor(s0, 1, 1), t0).entries
        pp = push_pull(frame, MultiTensor(s0, 1, 1)).entries
        kind = "projection" if s.tag == "projection" else "complex"
        bump(f"{kind}_drift", np.linalg.norm(traj - s0, axis=(1, 2)).max())
        bump("push_pull_agreement", np.linalg.norm(traj - pp, axis=(1, 2)).max())
        bump("ricci_commutator", np.linalg.norm(rcs @ traj - traj @ rcs, axis=(1, 2)).max())
        gs_s = gs @ traj
        if s.tag == "projection":
            proj_traj.append(traj)
            bump("idempotence", np.linalg.norm(traj @ traj - traj, axis=(1, 2)).max())
            bump("g_self_adjoint", np.linalg.norm(gs_s - np.swapaxes(gs_s, 1, 2), axis=(1, 2)).max())
        else:
            bump("j_squared", np.linalg.norm(traj @ traj + eye, axis=(1, 2)).max())
            jt_g_j = np.swapaxes(traj, 1, 2) @ gs @ traj
            bump("j_compatibility", (np.linalg.norm(jt_g_j - gs, axis=(1, 2)) / np.linalg.norm(gs, axis=(1, 2))).max())
    if len(proj_traj) > 1:
        bump("complementarity", np.linalg.norm(sum(proj_traj) - eye, axis=(1, 2)).max())
    defaults = {
        "projection_drift": 1e-10,
        "complex_drift": 1e-9,
        "push_pull_agreement": 1e-7,
        "ricci_commutator": 1e-8,
    }
    res = [Residual(k, v, tol(k, defaults.get(k, 1e-9))) for k, v in worst.items()]
    params["structures"] = [s.name for s in model.parallel_structures]
    return CheckReport("structure_constancy", model.name, params, res)


CHECKS = (
    "curvature_identities",
    "flow_invariants",
    "ambrose_singer",
    "transport_evolution",
    "holonomy_velocity",
    "full_holonomy",
    "structure_constancy",
)
