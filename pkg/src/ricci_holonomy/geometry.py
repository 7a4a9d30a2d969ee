"""Curvature of a chart metric ``g(x, theta)``.

Every quantity is built from the metric by repeated differentiation in the
chart.  With ``derivatives="analytic"`` the derivatives come from forward-mode
autodiff of the closed-form metric (exact to rounding); ``"fd"`` replaces each
level with a Richardson-extrapolated central difference.

Array conventions (derivative index first, contravariant before covariant
otherwise):

* ``christoffel[k, i, j]`` is ``Gamma^k_ij``
* ``riemann[i, j, k, l]`` is ``R_ijk^l`` with ``R(d_i, d_j) d_k = R_ijk^l d_l``
  and ``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``
* ``ricci[j, k] = R_ijk^i`` (positive on round spheres)
* ``nabla_ricci[m, j, k]`` is ``nabla_m R_jk``
* ``div_rm[i, j, k]`` is ``(divRm(d_i))^j_k`` where
  ``divRm(X) Y = sum_l (nabla_{e_l} R)(e_l, X) Y`` over a g-orthonormal frame.
"""

from __future__ import annotations

from dataclasses import dataclass
import jax
import jax.numpy as jnp
import numpy as np

__all__ = [
    "CurvaturePack",
    "CurvatureEngine",
    "curvature_at",
    "christoffel_dot",
    "gram_schmidt_frame",
    "pack_invariants",
]

# FD steps per differentiation level, as fractions of the chart scale.  Deeper
# levels differentiate noisier data and need larger steps.
FD_STEPS = (1e-5, 1e-3, 1e-2)


@dataclass(frozen=True)
class CurvaturePack:
    g: np.ndarray
    g_inv: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    ricci_endo: np.ndarray
    nabla_ricci: np.ndarray
    nabla_riemann: np.ndarray
    div_rm: np.ndarray

    def curvature_endo(self, i: int, j: int) -> np.ndarray:
        """Matrix of ``R(d_i, d_j)`` acting on coordinate vectors."""
        return self.riemann[i, j].T

    def div_rm_along(self, v) -> np.ndarray:
        """Matrix of ``divRm(v)`` for a coordinate vector ``v``."""
        return np.einsum("i,ijk->jk", np.asarray(v, dtype=float), self.div_rm)


def _jac(f):
    """Derivative operator: result gains a leading index over ``x``."""

    def df(x, th):
        return jnp.moveaxis(jax.jacfwd(f)(x, th), -1, 0)

    return df


def _fd(f, step):
    """Central difference with one Richardson level, leading derivative index."""

    def df(x, th):
        n = x.shape[0]
        eye = jnp.eye(n, dtype=x.dtype)
        # all 4n stencil points in one vmap keeps nested derivatives compact
        shifts = jnp.concatenate([0.5 * step * eye, -0.5 * step * eye, step * eye, -step * eye])
        vals = jax.vmap(lambda dx: f(x + dx, th))(shifts)
        half = (vals[:n] - vals[n : 2 * n]) / step
        full = (vals[2 * n : 3 * n] - vals[3 * n :]) / (2.0 * step)
        return (4.0 * half - full) / 3.0

    return df


def gram_schmidt_frame(g, order=None):
    """Columns form a g-orthonormal frame built from coordinate vectors.

    ``order`` fixes which coordinate vector is processed first; by default the
    coordinate order.  Works on numpy and traced arrays alike.
    """
    n = g.shape[0]
    order = list(range(n)) if order is None else list(order)
    eye = jnp.eye(n, dtype=g.dtype)
    cols = []
    for idx in order:
        v = eye[idx]
        for e in cols:
            v = v - (e @ g @ v) * e
        v = v / jnp.sqrt(v @ g @ v)
        cols.append(v)
    return jnp.stack(cols, axis=1)


def _pipeline(metric, deriv, steps):
    """Curvature functions of ``(x, theta)`` built on a derivative operator."""
    d1, d2, d3 = (deriv(s) for s in steps)

    def christoffel(x, th):
        g = metric(x, th)
        dg = d1(metric)(x, th)
        t = dg + jnp.transpose(dg, (1, 0, 2)) - jnp.transpose(dg, (1, 2, 0))
        return 0.5 * jnp.einsum("kl,ijl->kij", jnp.linalg.inv(g), t)

    def riemann(x, th):
        gam = christoffel(x, th)
        dgam = d2(christoffel)(x, th)  # dgam[m, k, i, j] = d_m Gamma^k_ij
        return (
            jnp.einsum("iljk->ijkl", dgam)
            - jnp.einsum("jlik->ijkl", dgam)
            + jnp.einsum("mjk,lim->ijkl", gam, gam)
            - jnp.einsum("mik,ljm->ijkl", gam, gam)
        )

    def nabla_riemann(x, th):
        gam = christoffel(x, th)
        r = riemann(x, th)
        dr = d3(riemann)(x, th)
        return (
            dr
            - jnp.einsum("pmi,pjkl->mijkl", gam, r)
            - jnp.einsum("pmj,ipkl->mijkl", gam, r)
            - jnp.einsum("pmk,ijpl->mijkl", gam, r)
            + jnp.einsum("lmp,ijkp->mijkl", gam, r)
        )

    def pack(x, th, order):
        g = metric(x, th)
        g_inv = jnp.linalg.inv(g)
        gam = christoffel(x, th)
        r = riemann(x, th)
        nr = nabla_riemann(x, th)
        ric = jnp.einsum("ijki->jk", r)
        nric = jnp.einsum("mijki->mjk", nr)
        e = gram_schmidt_frame(g, order)
        frame_inv = e @ e.T  # sum_l e_l^m e_l^a, equals g^{ma}
        div = jnp.einsum("ma,maikj->ijk", frame_inv, nr)
        return g, g_inv, gam, r, ric, g_inv @ ric, nric, nr, div

    def ricci_endo(x, th):
        g = metric(x, th)
        ric = jnp.einsum("ijki->jk", riemann(x, th))
        return jnp.linalg.solve(g, ric)

    def div_rm(x, th):
        g = metric(x, th)
        nr = nabla_riemann(x, th)
        e = gram_schmidt_frame(g)
        return jnp.einsum("ma,maikj->ijk", e @ e.T, nr)

    def rm_norm(x, th):
        g = metric(x, th)
        gi = jnp.linalg.inv(g)
        low = jnp.einsum("ijkm,ml->ijkl", riemann(x, th), g)
        up = jnp.einsum("ia,jb,kc,ld,abcd->ijkl", gi, gi, gi, gi, low)
        return jnp.sqrt(jnp.abs(jnp.sum(low * up)))

    return christoffel, riemann, pack, ricci_endo, div_rm, rm_norm


def _pad(xs):
    """Pad a batch to a power of two so jit sees few distinct shapes."""
    n = xs.shape[0]
    m = 1 << max(4, (n - 1).bit_length())
    if m == n:
        return xs, n
    pad = np.repeat(xs[-1:], m - n, axis=0)
    return np.concatenate([xs, pad]), n


class CurvatureEngine:
    """Compiled curvature evaluators for one model.

    Instances are cached on the model (see :func:`engine_for`) so compilation
    happens once per model and derivative mode.
    """

    def __init__(self, model, derivatives: str = "analytic"):
        self.model = model
        self.derivatives = derivatives
        if derivatives == "analytic":
            deriv = lambda step: _jac  # noqa: E731
            steps = (None, None, None)
        elif derivatives == "fd":
            deriv = lambda step: (lambda f: _fd(f, step))  # noqa: E731
            steps = tuple(s * model.domain_scale for s in FD_STEPS)
        else:
            raise ValueError(f"unknown derivative mode {derivatives!r}")
        chris, riem, pack, ricci_endo, div_rm, rm_norm = _pipeline(model.metric, deriv, steps)
        self._christoffel = jax.jit(chris)
        self._pack = jax.jit(pack, static_argnums=2)
        self._christoffel_batch = jax.jit(jax.vmap(chris, in_axes=(0, None)))
        self._ricci_endo_x = jax.jit(jax.vmap(ricci_endo, in_axes=(0, None)))
        self._ricci_endo_theta = jax.jit(jax.vmap(ricci_endo, in_axes=(None, 0)))
        self._div_rm_batch = jax.jit(jax.vmap(div_rm, in_axes=(0, None)))
        self._riemann_batch = jax.jit(jax.vmap(riem, in_axes=(0, None)))
        self._metric_batch = jax.jit(jax.vmap(model.metric, in_axes=(0, None)))
        self._rm_norm_theta = jax.jit(jax.vmap(rm_norm, in_axes=(None, 0)))

    def pack(self, x, th, order=None) -> CurvaturePack:
        order = None if order is None else tuple(int(i) for i in order)
        out = self._pack(jnp.asarray(x, float), jnp.asarray(th, float), order)
        return CurvaturePack(*(np.asarray(a) for a in out))

    def christoffel(self, x, th) -> np.ndarray:
        return np.asarray(self._christoffel(jnp.asarray(x, float), jnp.asarray(th, float)))

    def _batched(self, fn, xs, th):
        xs = np.asarray(xs, float)
        padded, n = _pad(xs)
        return np.asarray(fn(jnp.asarray(padded), jnp.asarray(th, float)))[:n]

    def christoffel_batch(self, xs, th) -> np.ndarray:
        return self._batched(self._christoffel_batch, xs, th)

    def riemann_batch(self, xs, th) -> np.ndarray:
        return self._batched(self._riemann_batch, xs, th)

    def metric_batch(self, xs, th) -> np.ndarray:
        return self._batched(self._metric_batch, xs, th)

    def ricci_endo_batch(self, xs, th) -> np.ndarray:
        return self._batched(self._ricci_endo_x, xs, th)

    def div_rm_batch(self, xs, th) -> np.ndarray:
        return self._batched(self._div_rm_batch, xs, th)

    def _over_theta(self, fn, x, thetas):
        thetas = np.asarray(thetas, float)
        padded, n = _pad(thetas)
        return np.asarray(fn(jnp.asarray(x, float), jnp.asarray(padded)))[:n]

    def ricci_endo_over_theta(self, x, thetas) -> np.ndarray:
        return self._over_theta(self._ricci_endo_theta, x, thetas)

    def rm_norm_over_theta(self, x, thetas) -> np.ndarray:
        """``|Rm|_g`` at ``x`` for each coefficient vector."""
        return self._over_theta(self._rm_norm_theta, x, thetas)


def engine_for(model, derivatives: str = "analytic") -> CurvatureEngine:
    cache = model._engines
    if derivatives not in cache:
        cache[derivatives] = CurvatureEngine(model, derivatives)
    return cache[derivatives]


def curvature_at(model, x, theta, derivatives: str = "auto", frame_order=None) -> CurvaturePack:
    """All curvature quantities of ``model`` at chart point ``x`` and coefficients ``theta``.

    ``derivatives="auto"`` uses autodiff when the model's metric supports it
    and finite differences otherwise.  ``frame_order`` picks the Gram-Schmidt
    order of the orthonormal frame used to assemble ``div_rm``.
    """
    model.check_point(x)
    model.check_theta(theta)
    if derivatives == "auto":
        derivatives = "analytic" if model.analytic else "fd"
    return engine_for(model, derivatives).pack(x, theta, frame_order)


def christoffel_dot(model, x, theta, theta_dot=None, rel_eps: float = 1e-5):
    """Time derivative of the Christoffel symbols under the flow.

    Returns ``(rate, discrepancy)`` where ``rate[k, i, j]`` is
    ``nabla^k R_ij - nabla_i R^k_j - nabla_j R_i^k`` and ``discrepancy`` is the
    relative gap to a central difference of ``Gamma`` along
    ``theta + eps * theta_dot``.  ``theta_dot`` defaults to the model's flow
    right-hand side, the only direction where the formula applies.
    """
    theta = np.asarray(theta, float)
    theta_dot = model.flow_rhs(theta) if theta_dot is None else np.asarray(theta_dot, float)
    p = curvature_at(model, x, theta)
    nr, gi = p.nabla_ricci, p.g_inv
    rate = (
        np.einsum("kl,lij->kij", gi, nr)
        - np.einsum("ka,iaj->kij", gi, nr)
        - np.einsum("ka,jia->kij", gi, nr)
    )
    speed = np.linalg.norm(theta_dot)
    if speed == 0.0:
        fd = np.zeros_like(rate)
    else:
        eps = rel_eps * max(1.0, np.linalg.norm(theta)) / speed
        eng = engine_for(model)
        fd = (eng.christoffel(x, theta + eps * theta_dot) - eng.christoffel(x, theta - eps * theta_dot)) / (2 * eps)
    disc = np.linalg.norm(rate - fd) / max(1.0, np.linalg.norm(rate))
    return rate, float(disc)


def pack_invariants(p: CurvaturePack) -> dict[str, float]:
    """Residuals of the algebraic and differential identities a pack must satisfy."""
    r = p.riemann
    scale = max(1.0, np.linalg.norm(r))
    antisym = np.linalg.norm(r + r.transpose(1, 0, 2, 3)) / scale
    bianchi1 = np.linalg.norm(r + r.transpose(1, 2, 0, 3) + r.transpose(2, 0, 1, 3)) / scale
    ric_sym = np.linalg.norm(p.ricci - p.ricci.T) / max(1.0, np.linalg.norm(p.ricci))
    # nabla^k R_ji - nabla_j R_i^k  versus  g^{lm} nabla_l R_mij^k
    nr, gi = p.nabla_ricci, p.g_inv
    lhs = np.einsum("kl,lji->ijk", gi, nr) - np.einsum("ka,jia->ijk", gi, nr)
    rhs = np.einsum("lm,lmijk->ijk", gi, p.nabla_riemann)
    bianchi2 = np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(rhs))
    div_antisym = 0.0
    for i in range(p.g.shape[0]):
        ga = p.g @ p.div_rm[i]
        div_antisym = max(div_antisym, np.linalg.norm(ga + ga.T) / max(1.0, np.linalg.norm(ga)))
    return {
        "riemann_antisymmetry": float(antisym),
        "first_bianchi": float(bianchi1),
        "ricci_symmetry": float(ric_sym),
        "contracted_second_bianchi": float(bianchi2),
        "div_rm_antisymmetry": float(div_antisym),
    }
