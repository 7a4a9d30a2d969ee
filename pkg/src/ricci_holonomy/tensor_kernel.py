"""Small dense multilinear algebra.

Square maps and inner products are plain ``(n, n)`` float arrays; for a map
the row index is the output slot.  :class:`MultiTensor` stores contravariant
slots before covariant ones, e.g. a (1, 2) tensor ``A^a_{bc}`` lives in
``entries[a, b, c]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, DomainError

__all__ = [
    "MultiTensor",
    "as_inner_product",
    "raise_lower",
    "antisymmetry_residual",
    "matrix_log_near_identity",
    "matrix_exp",
    "project_onto_span",
    "orthonormal_span",
    "commutator",
]


def as_inner_product(gram) -> np.ndarray:
    """Validate and return a symmetric positive-definite Gram matrix."""
    g = np.asarray(gram, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ContractError(f"gram must be square, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ContractError("gram has non-finite entries")
    g = 0.5 * (g + g.T)
    for k in range(1, g.shape[0] + 1):
        if np.linalg.det(g[:k, :k]) <= 0.0:
            raise ContractError("gram is not positive-definite")
    return g


@dataclass(frozen=True)
class MultiTensor:
    """A tensor with ``contravariant`` upper and ``covariant`` lower slots."""

    entries: np.ndarray
    contravariant: int
    covariant: int

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        rank = self.contravariant + self.covariant
        if a.ndim != rank or (rank and len(set(a.shape)) != 1):
            raise ContractError(
                f"entries of shape {a.shape} do not fit a "
                f"({self.contravariant},{self.covariant}) tensor"
            )
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0] if self.entries.ndim else 0

    @property
    def rank(self) -> int:
        return self.contravariant + self.covariant


def raise_lower(t: MultiTensor, slot: int, direction: str, g) -> MultiTensor:
    """Raise or lower one index of ``t`` with the metric ``g``.

    ``slot`` is an absolute position.  Lowering needs a contravariant slot and
    moves the index to the first covariant position; raising needs a covariant
    slot and moves the index to the last contravariant position, so the
    upper-before-lower ordering is kept.
    """
    g = as_inner_product(g)
    if g.shape[0] != t.dim:
        raise ContractError("metric and tensor dimensions differ")
    l, k = t.contravariant, t.covariant
    if direction == "lower":
        if not 0 <= slot < l:
            raise ContractError(f"slot {slot} is not contravariant in a ({l},{k}) tensor")
        moved = np.tensordot(t.entries, g, axes=([slot], [0]))
        return MultiTensor(np.moveaxis(moved, -1, l - 1), l - 1, k + 1)
    if direction == "raise":
        if not l <= slot < l + k:
            raise ContractError(f"slot {slot} is not covariant in a ({l},{k}) tensor")
        moved = np.tensordot(t.entries, np.linalg.inv(g), axes=([slot], [0]))
        return MultiTensor(np.moveaxis(moved, -1, l), l + 1, k - 1)
    raise ContractError(f"direction must be 'raise' or 'lower', got {direction!r}")


def antisymmetry_residual(a, g) -> float:
    """``||gA + (gA)^T||_F / max(1, ||gA||_F)``; zero iff ``A`` is in so(g)."""
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    if a.shape != g.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {g.shape}")
    ga = g @ a
    return float(np.linalg.norm(ga + ga.T) / max(1.0, np.linalg.norm(ga)))


def matrix_exp(a) -> np.ndarray:
    return expm(np.asarray(a, dtype=float))


def matrix_log_near_identity(a, radius: float = 0.5) -> np.ndarray:
    """Principal logarithm of a map within ``radius`` of the identity.

    Sums the Mercator series ``log(I + X) = X - X^2/2 + X^3/3 - ...`` until
    the tail bound drops below machine precision.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    x = a - np.eye(n)
    rho = np.linalg.norm(x, 2)
    if rho >= radius:
        raise DomainError(
            f"||A - I|| = {rho:.3g} exceeds {radius}; shrink the loop and retry"
        )
    out = np.zeros_like(x)
    term = np.eye(n)
    for k in range(1, 400):
        term = term @ x
        out += ((-1.0) ** (k + 1) / k) * term
        if rho**k / k < 1e-18 * max(1.0, np.linalg.norm(out)):
            break
    return out


def commutator(a, b) -> np.ndarray:
    return a @ b - b @ a


def orthonormal_span(
    maps: Sequence[np.ndarray], rank_tol: float = 1e-10, relative: bool = False
) -> list[np.ndarray]:
    """Frobenius-orthonormal basis of the span of ``maps``.

    Directions with singular value at most ``rank_tol`` (scaled by the largest
    singular value when ``relative``) are dropped.  Inputs are normalized first
    unless ``relative`` is set, in which case their magnitudes matter.
    """
    vecs = []
    shape = None
    for m in maps:
        m = np.asarray(m, dtype=float)
        shape = m.shape
        nrm = np.linalg.norm(m)
        if relative:
            vecs.append(m.ravel())
        elif nrm > 1e-300:
            vecs.append(m.ravel() / nrm)
    if not vecs:
        return []
    stack = np.array(vecs)
    _, s, vt = np.linalg.svd(stack, full_matrices=False)
    cut = rank_tol * (s[0] if relative else 1.0)
    if relative and s[0] == 0.0:
        return []
    return [vt[i].reshape(shape) for i in range(len(s)) if s[i] > cut]


def project_onto_span(x, basis: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Frobenius-orthogonal projection of ``x`` onto ``span(basis)``.

    Returns ``(projection, ||x - projection|| / max(1, ||x||))``.  The basis
    may be redundant; it is orthonormalized with rank tolerance 1e-10.
    """
    x = np.asarray(x, dtype=float)
    for b in basis:
        if np.shape(b) != x.shape:
            raise ContractError("basis element shape differs from x")
    onb = orthonormal_span(basis)
    proj = np.zeros_like(x)
    for e in onb:
        proj += np.sum(e * x) * e
    resid = np.linalg.norm(x - proj) / max(1.0, np.linalg.norm(x))
    return proj, float(resid)
