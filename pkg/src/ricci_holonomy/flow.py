"""Fixed-step RK4 integration of the coefficient flow and the fiberwise ODEs.

Everything is anchored at a time ``t0`` inside ``[0, T]`` and integrated in
both directions from there.  Step sizes are fixed per run; the error estimate
compares against a run with every step halved, and the step is halved until
the estimate is below tolerance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import ExtinctionError
from .geometry import engine_for
from .tensor_kernel import MultiTensor

__all__ = [
    "FlowState",
    "UhlenbeckFrame",
    "TensorTrajectory",
    "integrate_flow",
    "integrate_uhlenbeck",
    "evolve_parallel_tensor",
    "push_pull",
    "rk4_linear_propagators",
    "chain_product",
]

log = logging.getLogger(__name__)

MAX_HALVINGS = 6


def time_grid(T: float, t0: float, max_step: float) -> np.ndarray:
    """Uniform grid on each side of ``t0``, containing ``0``, ``t0`` and ``T``."""
    if not 0.0 <= t0 <= T or T <= 0.0:
        raise ValueError(f"need 0 <= t0 <= T and T > 0, got t0={t0}, T={T}")
    back = np.linspace(0.0, t0, max(1, math.ceil(t0 / max_step - 1e-9)) + 1) if t0 > 0 else np.array([0.0])
    fwd = np.linspace(t0, T, max(1, math.ceil((T - t0) / max_step - 1e-9)) + 1) if T > t0 else np.array([t0])
    return np.concatenate([back[:-1], fwd])


def _refine(times: np.ndarray, m: int) -> np.ndarray:
    """Split every interval of ``times`` into ``m`` equal pieces."""
    if m == 1:
        return times
    frac = np.arange(m) / m
    inner = times[:-1, None] + frac[None, :] * np.diff(times)[:, None]
    return np.concatenate([inner.ravel(), times[-1:]])


def rk4_linear_propagators(m0, mh, m1, h):
    """One-step RK4 maps for ``Y' = M(t) Y`` given ``M`` at start, midpoint, end.

    Inputs are stacks ``(N, n, n)``; ``h`` is a scalar or length-``N`` array.
    """
    h = np.asarray(h, float).reshape(-1, 1, 1)
    eye = np.eye(m0.shape[-1])
    k1 = m0
    k2 = mh @ (eye + 0.5 * h * k1)
    k3 = mh @ (eye + 0.5 * h * k2)
    k4 = m1 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def chain_product(props) -> np.ndarray:
    """``props[-1] @ ... @ props[0]`` by pairwise reduction."""
    props = np.asarray(props)
    if len(props) == 0:
        raise ValueError("empty product")
    while len(props) > 1:
        if len(props) % 2:
            tail = props[-1:]
            props = props[:-1]
        else:
            tail = None
        props = props[1::2] @ props[0::2]
        if tail is not None:
            props = np.concatenate([props, tail])
    return props[0]


def _cumulative(props, start) -> np.ndarray:
    out = [start]
    for p in props:
        out.append(p @ out[-1])
    return np.array(out)


# --------------------------------------------------------------------------
# coefficient flow


@dataclass
class FlowState:
    """Coefficient trajectory ``theta(t)`` on a grid, with Hermite interpolation."""

    model: object
    times: np.ndarray
    thetas: np.ndarray
    t0: float
    error_estimate: float = 0.0
    slopes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.slopes = np.array([self.model.flow_rhs(th) for th in self.thetas])
        self._spline = CubicHermiteSpline(self.times, self.thetas, self.slopes, axis=0)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    def at(self, t):
        self._check_range(t)
        return self._spline(t)

    def rate(self, t):
        self._check_range(t)
        return self._spline(t, 1)

    def _check_range(self, t):
        t = np.asarray(t)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise ValueError(f"time outside flow range [{self.times[0]}, {self.times[-1]}]")

    def ode_residual(self, probes) -> float:
        """Max ``|theta'(t) - rhs(theta(t))|`` at the given off-grid times."""
        return max(float(np.linalg.norm(self.rate(t) - self.model.flow_rhs(self.at(t)))) for t in probes)


def _rk4_run(rhs, admissible, y0, ts):
    """RK4 along ``ts`` (monotone); returns values reached and whether it stopped early."""
    ys = [np.asarray(y0, float)]
    for a, b in zip(ts[:-1], ts[1:]):
        h = b - a
        y = ys[-1]
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y_new = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not admissible(y_new) or not all(admissible(y + c * h * k) for c, k in ((0.5, k1), (0.5, k2), (1.0, k3))):
            return np.array(ys), True
        ys.append(y_new)
    return np.array(ys), False


def _critical_time(model, t_stop, theta, direction) -> float:
    v = direction * model.flow_rhs(theta)
    shrinking = v < 0
    if not np.any(shrinking):
        return float(t_stop)
    tau = np.min(theta[shrinking] / -v[shrinking])
    return float(t_stop + direction * tau)


def integrate_flow(
    model,
    theta0,
    T: float,
    t0: float = 0.0,
    max_step: float | None = None,
    tol: float = 1e-10,
    curvature_margin: float = 10.0,
) -> FlowState:
    """Integrate ``d theta / dt = flow_rhs(theta)`` on ``[0, T]`` from ``theta(t0) = theta0``.

    Steps are at most ``1e-3 T``.  Raises :class:`ExtinctionError` when the
    coefficients leave the admissible region or ``|Rm|`` at the basepoint
    exceeds ``curvature_margin`` times its value at ``t0``.
    """
    theta0 = np.asarray(theta0, float)
    model.check_theta(theta0)
    step = 1e-3 * T if max_step is None else min(max_step, 1e-3 * T)
    grid = time_grid(T, t0, step)

    def run(times):
        k0 = int(np.argmin(np.abs(times - t0)))
        fwd, stop_f = _rk4_run(model.flow_rhs, model.admissible, theta0, times[k0:])
        bwd, stop_b = _rk4_run(model.flow_rhs, model.admissible, theta0, times[k0::-1])
        lo = k0 - (len(bwd) - 1)
        return np.concatenate([bwd[::-1], fwd[1:]]), lo, stop_f or stop_b

    err = 0.0
    for halving in range(MAX_HALVINGS + 1):
        m = 2**halving
        coarse, lo, stopped = run(_refine(grid, m))
        if stopped:
            break
        fine, _, stopped = run(_refine(grid, 2 * m))
        if stopped:
            break
        err = float(np.max(np.abs(fine[::2] - coarse)) / 15.0) / T
        if err < tol:
            break
    else:
        log.warning("%s: flow error estimate %.2e above tolerance %.1e", model.name, err, tol)

    # keep grid nodes only
    idx = lo + np.arange(len(coarse))
    keep = idx % m == 0
    times, thetas = grid[idx[keep] // m], coarse[keep]

    norms = engine_for(model).rm_norm_over_theta(model.basepoint, thetas)
    k0 = int(np.argmin(np.abs(times - t0)))
    limit = curvature_margin * max(norms[k0], 1e-12)
    over = np.nonzero(norms > limit)[0]
    lo_cut = over[over < k0].max() + 1 if np.any(over < k0) else 0
    hi_cut = over[over > k0].min() if np.any(over > k0) else len(times)
    margin_hit = lo_cut > 0 or hi_cut < len(times)
    if margin_hit:
        times, thetas = times[lo_cut:hi_cut], thetas[lo_cut:hi_cut]
        k0 -= lo_cut

    incomplete = times[0] > 1e-12 or times[-1] < T - 1e-12
    if incomplete:
        forward = times[-1] < T - 1e-12
        idx = -1 if forward else 0
        direction = 1.0 if forward else -1.0
        t_stop = float(times[idx])
        t_crit = _critical_time(model, t_stop, thetas[idx], direction)
        partial = FlowState(model, times, thetas, t0, err) if len(times) >= 2 else None
        reason = "curvature margin exceeded" if margin_hit else "coefficients left the admissible region"
        raise ExtinctionError(
            f"{model.name}: {reason} at t = {t_stop:.6g}; extrapolated singular time {t_crit:.6g}",
            t_stop,
            t_crit,
            partial,
        )
    return FlowState(model, times, thetas, t0, err)


# --------------------------------------------------------------------------
# Uhlenbeck frame and parallel tensors


@dataclass
class UhlenbeckFrame:
    """``iota_t`` at a point ``q`` with ``iota_{t0} = Id``; hence ``psi_t = iota_t``."""

    q: np.ndarray
    times: np.ndarray
    iotas: np.ndarray
    slopes: np.ndarray
    t0: float
    h: np.ndarray
    error_estimate: float = 0.0

    def __post_init__(self):
        n = self.iotas.shape[-1]
        self._spline = CubicHermiteSpline(
            self.times, self.iotas.reshape(len(self.times), n * n), self.slopes.reshape(len(self.times), n * n), axis=0
        )

    def at(self, t) -> np.ndarray:
        n = self.iotas.shape[-1]
        return self._spline(t).reshape(np.shape(t) + (n, n))

    def psi(self, t) -> np.ndarray:
        return self.at(t)

    def isometry_residual(self, flow: FlowState) -> float:
        """Max over grid times of ``||iota^T g(t) iota - h||``."""
        worst = 0.0
        for iota, th in zip(self.iotas, flow.at(self.times)):
            g = flow.model.g(self.q, th)
            worst = max(worst, float(np.linalg.norm(iota.T @ g @ iota - self.h)))
        return worst


def _substep_rates(flow: FlowState, q, m: int):
    """Ricci endomorphisms at ``q`` on the refined grid and at its midpoints."""
    eng = engine_for(flow.model)
    ts = _refine(flow.times, m)
    mids = 0.5 * (ts[:-1] + ts[1:])
    rc_nodes = eng.ricci_endo_over_theta(q, flow.at(ts))
    rc_mids = eng.ricci_endo_over_theta(q, flow.at(mids))
    return ts, rc_nodes, rc_mids


def _linear_both_ways(ts, rc_nodes, rc_mids, k0):
    """Solve ``Y' = Rc Y`` from ``Y(ts[k0]) = Id`` toward both ends."""
    n = rc_nodes.shape[-1]
    h = np.diff(ts)
    fwd = rk4_linear_propagators(rc_nodes[k0:-1], rc_mids[k0:], rc_nodes[k0 + 1 :], h[k0:])
    bwd = rk4_linear_propagators(rc_nodes[1 : k0 + 1][::-1], rc_mids[:k0][::-1], rc_nodes[:k0][::-1], -h[:k0][::-1])
    eye = np.eye(n)
    ys_f = _cumulative(fwd, eye)
    ys_b = _cumulative(bwd, eye)
    return np.concatenate([ys_b[::-1][:-1], ys_f])


def integrate_uhlenbeck(flow: FlowState, q=None, t0: float | None = None, tol: float = 1e-10) -> UhlenbeckFrame:
    """Integrate ``d iota / dt = Rc(q, t) iota`` with ``iota_{t0} = Id``.

    The fiber metric is ``h = g_q(t0)``.  The substep count doubles until the
    halving estimate drops below ``tol`` per unit time.
    """
    model = flow.model
    q = model.basepoint if q is None else np.asarray(q, float)
    model.check_point(q)
    t0 = flow.t0 if t0 is None else float(t0)
    k0 = int(np.argmin(np.abs(flow.times - t0)))
    if abs(flow.times[k0] - t0) > 1e-12:
        raise ValueError(f"t0 = {t0} is not a node of the flow grid")

    def solve(m):
        ts, rn, rm = _substep_rates(flow, q, m)
        return _linear_both_ways(ts, rn, rm, k0 * m)[::m], rn[::m]

    span = max(flow.T - flow.t_start, 1e-300)
    err = 0.0
    for halving in range(MAX_HALVINGS + 1):
        m = 2**halving
        coarse, rc = solve(m)
        fine, _ = solve(2 * m)
        err = float(np.max(np.abs(fine - coarse)) / 15.0) / span
        if err < tol:
            break
    else:
        log.warning("%s: Uhlenbeck error estimate %.2e above tolerance %.1e", model.name, err, tol)
    slopes = rc @ coarse
    h = model.g(q, flow.thetas[k0])
    return UhlenbeckFrame(q, flow.times.copy(), coarse, slopes, t0, h, err)


@dataclass
class TensorTrajectory:
    times: np.ndarray
    entries: np.ndarray
    contravariant: int
    covariant: int

    def tensor(self, k: int) -> MultiTensor:
        return MultiTensor(self.entries[k], self.contravariant, self.covariant)


def _ricci_action(a: np.ndarray, rc: np.ndarray, contravariant: int) -> np.ndarray:
    """Linear right-hand side: ``+Rc`` on upper slots, ``-Rc^T`` on lower slots."""
    out = np.zeros_like(a)
    for slot in range(a.ndim):
        if slot < contravariant:
            out += np.moveaxis(np.tensordot(rc, a, axes=([1], [slot])), 0, slot)
        else:
            out -= np.moveaxis(np.tensordot(a, rc, axes=([slot], [0])), -1, slot)
    return out


def evolve_parallel_tensor(flow: FlowState, q, a0: MultiTensor, t0: float | None = None, substeps: int = 2) -> TensorTrajectory:
    """Fiberwise ODE carrying a tensor at ``q`` along the flow.

    Upper indices evolve by ``+Rc`` and lower indices by ``-Rc`` (acting on the
    index through ``R^c_b``), so the result equals ``(iota_t)_* a0`` with
    ``iota_{t0} = Id``; see :func:`push_pull`.
    """
    model = flow.model
    q = model.basepoint if q is None else np.asarray(q, float)
    t0 = flow.t0 if t0 is None else float(t0)
    k0 = int(np.argmin(np.abs(flow.times - t0)))
    ts, rn, rm = _substep_rates(flow, q, substeps)
    l = a0.contravariant
    kk = k0 * substeps

    def march(idx_pairs):
        vals = [a0.entries]
        for i, j, mid in idx_pairs:
            h = ts[j] - ts[i]
            a = vals[-1]
            k1 = _ricci_action(a, rn[i], l)
            k2 = _ricci_action(a + 0.5 * h * k1, rm[mid], l)
            k3 = _ricci_action(a + 0.5 * h * k2, rm[mid], l)
            k4 = _ricci_action(a + h * k3, rn[j], l)
            vals.append(a + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        return vals

    fwd = march([(i, i + 1, i) for i in range(kk, len(ts) - 1)])
    bwd = march([(i, i - 1, i - 1) for i in range(kk, 0, -1)])
    allvals = np.array(bwd[::-1][:-1] + fwd)[::substeps]
    return TensorTrajectory(flow.times.copy(), allvals, a0.contravariant, a0.covariant)


def push_pull(frame: UhlenbeckFrame, a0: MultiTensor) -> TensorTrajectory:
    """``(iota_t)_* a0`` on the frame's grid (``iota_{t0}`` is the identity)."""
    out = []
    for iota in frame.iotas:
        inv = np.linalg.inv(iota)
        a = a0.entries
        for slot in range(a0.rank):
            if slot < a0.contravariant:
                a = np.moveaxis(np.tensordot(iota, a, axes=([1], [slot])), 0, slot)
            else:
                a = np.moveaxis(np.tensordot(a, inv, axes=([slot], [0])), -1, slot)
        out.append(a)
    return TensorTrajectory(frame.times.copy(), np.array(out), a0.contravariant, a0.covariant)
