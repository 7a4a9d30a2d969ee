"""Parallel transport along chart loops and holonomy-algebra estimates.

Transport solves ``dV^k/ds = -Gamma^k_ij(gamma(s)) gamma'^i V^j`` for a full
frame with RK4.  Christoffel symbols at all nodes and midpoints of a segment
are evaluated in one batch, turned into one-step propagators, and multiplied
together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .catalog import LineSegment, LoopPath, polyline_loop
from .errors import DomainError
from .flow import chain_product, rk4_linear_propagators
from .geometry import curvature_at, engine_for
from .tensor_kernel import commutator, matrix_log_near_identity

__all__ = [
    "TransportResult",
    "AlgebraEstimate",
    "transport_loop",
    "transport_segment",
    "segment_frames",
    "smallloop_algebra",
    "curvature_span_algebra",
    "span_basis",
]

log = logging.getLogger(__name__)

DEFAULT_STEPS = 2000
ORTHOGONALITY_FLAG = 1e-6


@dataclass
class TransportResult:
    map: np.ndarray
    orthogonality_residual: float
    steps: int
    max_local_error: float
    flagged: bool = False


@dataclass
class AlgebraEstimate:
    basis: list
    source: str
    details: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.basis)


def _theta(flow, t, theta):
    if theta is not None:
        return np.asarray(theta, float)
    return flow.at(t)


def _segment_propagators(model, theta, seg, steps):
    """Fine (``steps``) and coarse (``steps/2``) one-step propagators."""
    s = np.linspace(0.0, 1.0, 2 * steps + 1)
    pts = seg.point(s)
    model.check_point(pts)
    gam = engine_for(model).christoffel_batch(pts, theta)
    vel = seg.velocity(s)
    m = -np.einsum("nkij,ni->nkj", gam, vel)
    fine = rk4_linear_propagators(m[0:-1:2], m[1::2], m[2::2], 1.0 / steps)
    coarse = rk4_linear_propagators(m[0:-1:4], m[2::4], m[4::4], 2.0 / steps) if steps % 2 == 0 else None
    return fine, coarse


def transport_segment(model, theta, seg, steps: int = DEFAULT_STEPS):
    """Transport map along one segment and its step-halving error estimate."""
    fine, coarse = _segment_propagators(model, theta, seg, steps)
    p = chain_product(fine)
    err = 0.0 if coarse is None else float(np.linalg.norm(p - chain_product(coarse)) / 15.0)
    return p, err


def segment_frames(model, theta, seg, steps: int = DEFAULT_STEPS):
    """Transport maps from the segment start to every node ``s = k / steps``."""
    fine, _ = _segment_propagators(model, theta, seg, steps)
    out = [np.eye(model.dim)]
    for p in fine:
        out.append(p @ out[-1])
    return np.array(out)


def transport_loop(
    model,
    flow,
    t: float,
    loop: LoopPath,
    steps: int = DEFAULT_STEPS,
    frame=None,
    theta=None,
) -> TransportResult:
    """Levi-Civita transport of ``g(t)`` around ``loop``.

    With ``frame`` (an :class:`~ricci_holonomy.flow.UhlenbeckFrame` at the
    basepoint) the pulled-back map ``iota_t^-1 P iota_t`` is returned instead.
    """
    th = _theta(flow, t, theta)
    model.check_theta(th)
    loop.validate()
    p = np.eye(model.dim)
    point = loop.basepoint
    err = 0.0
    for kind, obj in loop.items():
        if kind == "deck":
            p = obj.differential(point) @ p
            point = obj(point)
        else:
            seg_map, seg_err = transport_segment(model, th, obj, steps)
            p = seg_map @ p
            err = max(err, seg_err)
            point = obj.end
    g = model.g(loop.basepoint, th)
    orth = float(np.linalg.norm(p.T @ g @ p - g) / np.linalg.norm(g))
    flagged = orth >= ORTHOGONALITY_FLAG
    if flagged:
        log.warning("%s: transport around %r drifted from orthogonality (%.2e)", model.name, loop.label, orth)
    if frame is not None:
        iota = frame.at(t)
        p = np.linalg.solve(iota, p @ iota)
    return TransportResult(p, orth, steps, err, flagged)


def span_basis(maps, rel_tol: float, abs_tol: float) -> list:
    """Frobenius-orthonormal basis, dropping singular values below both tolerances."""
    maps = [np.asarray(m, float) for m in maps]
    if not maps:
        return []
    shape = maps[0].shape
    stack = np.array([m.ravel() for m in maps])
    _, s, vt = np.linalg.svd(stack, full_matrices=False)
    if s[0] <= abs_tol:
        return []
    cut = max(abs_tol, rel_tol * s[0])
    return [vt[i].reshape(shape) for i in range(len(s)) if s[i] > cut]


def _plane_area_factor(g, i, j) -> float:
    return float(np.sqrt(g[i, i] * g[j, j] - g[i, j] ** 2))


def square_loop(q, i, j, eps) -> LoopPath:
    n = len(q)
    ei, ej = np.eye(n)[i] * eps, np.eye(n)[j] * eps
    return polyline_loop(q, [q + ei, q + ei + ej, q + ej], f"square_{i}{j}")


def smallloop_algebra(model, flow, t, q=None, eps: float = 1e-2, steps: int = 64, theta=None) -> AlgebraEstimate:
    """Holonomy-algebra estimate from transport around coordinate squares of side ``eps``.

    For each coordinate pair the generator is ``-log(P) / area`` with the
    Riemannian area of the square; it approximates the curvature endomorphism
    ``R(e_i, e_j)`` of an orthonormal pair spanning the same plane.  The
    per-pair deviations are reported in ``details["errors"]``.
    """
    th = _theta(flow, t, theta)
    q = model.basepoint if q is None else np.asarray(q, float)
    pack = curvature_at(model, q, th)
    g = pack.g
    gens, errors, curv = {}, {}, {}
    for i, j in combinations(range(model.dim), 2):
        loop = square_loop(q, i, j, eps)
        res = transport_loop(model, None, t, loop, steps=steps, theta=th)
        try:
            x = matrix_log_near_identity(res.map)
        except DomainError as exc:
            raise DomainError(f"eps = {eps} too large for the logarithm; halve it ({exc})") from exc
        a = _plane_area_factor(g, i, j)
        gens[(i, j)] = -x / (a * eps * eps)
        curv[(i, j)] = pack.curvature_endo(i, j) / a
        errors[(i, j)] = float(np.linalg.norm(gens[(i, j)] - curv[(i, j)]))
    basis = span_basis(list(gens.values()), rel_tol=1e-6, abs_tol=1e-8)
    total = float(np.sqrt(sum(e * e for e in errors.values())))
    return AlgebraEstimate(
        basis,
        "small_loop",
        {"eps": eps, "generators": gens, "curvature": curv, "errors": errors, "total_error": total},
    )


def curvature_span_algebra(
    model, flow, t, sample_points, q=None, steps: int = 1000, theta=None, max_rounds: int = 2
) -> AlgebraEstimate:
    """Span of curvature endomorphisms transported to ``q``, closed under brackets.

    Endomorphisms ``R(d_i, d_j)`` at each sample point (and at ``q``) are moved
    to ``q`` along the straight chart segment; one commutator round is added,
    then a second if the rank grew.  Further growth is recorded as unclosed.
    """
    th = _theta(flow, t, theta)
    q = model.basepoint if q is None else np.asarray(q, float)
    pts = [q] + [np.asarray(x, float) for x in sample_points]
    model.check_point(np.array(pts))
    riem = engine_for(model).riemann_batch(np.array(pts), th)
    maps = []
    for x, r in zip(pts, riem):
        if np.allclose(x, q):
            tmap = np.eye(model.dim)
        else:
            tmap, _ = transport_segment(model, th, LineSegment(x, q), steps)
        tinv = np.linalg.inv(tmap)
        for i, j in combinations(range(model.dim), 2):
            maps.append(tmap @ r[i, j].T @ tinv)
    basis = span_basis(maps, rel_tol=1e-8, abs_tol=1e-10)
    ranks = [len(basis)]
    rounds = 0
    while rounds < max_rounds:
        brackets = [commutator(a, b) for a, b in combinations(basis, 2)]
        new = span_basis(basis + brackets, rel_tol=1e-8, abs_tol=1e-10)
        rounds += 1
        grew = len(new) > len(basis)
        basis = new
        ranks.append(len(basis))
        if not grew:
            break
    closed = True
    if rounds == max_rounds and ranks[-1] > ranks[-2]:
        brackets = [commutator(a, b) for a, b in combinations(basis, 2)]
        closed = len(span_basis(basis + brackets, rel_tol=1e-8, abs_tol=1e-10)) == len(basis)
        if not closed:
            log.warning("%s: curvature span still growing after %d bracket rounds", model.name, rounds)
    return AlgebraEstimate(basis, "curvature_span", {"ranks": ranks, "rounds": rounds, "closed": closed})
