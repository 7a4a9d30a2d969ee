"""Model geometries whose Ricci flow reduces to an ODE in a few coefficients.

Each model is one chart with a closed-form metric ``g(x, theta)`` written in
``jax.numpy``.  Quotients (tori, the Klein bottle, mapping tori, periodic
Euler angles) are encoded by deck transforms applied at loop junctions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, ContractError, DomainError, ParameterError

__all__ = [
    "DeckTransform",
    "LineSegment",
    "LoopPath",
    "ParallelStructure",
    "HolonomyDescriptor",
    "ManifoldModel",
    "holonomy_membership",
    "catalog_models",
    "get_model",
    "model_names",
]

POLE_MARGIN = 1e-3
TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------------
# deck transforms and loops


@dataclass(frozen=True)
class DeckTransform:
    """An isometric self-map of the chart encoding a quotient identification."""

    label: str
    coord_map: Callable[[np.ndarray], np.ndarray]
    inverse_map: Callable[[np.ndarray], np.ndarray]
    linear_part: np.ndarray

    def __call__(self, x):
        return np.asarray(self.coord_map(np.asarray(x, float)), float)

    def differential(self, x) -> np.ndarray:
        # every catalog deck map is affine in the chart
        return np.array(self.linear_part, float)

    def inverse(self) -> "DeckTransform":
        label = self.label[:-3] if self.label.endswith("^-1") else self.label + "^-1"
        return DeckTransform(label, self.inverse_map, self.coord_map, np.linalg.inv(self.linear_part))


def shift(label: str, dim: int, axis: int, period: float) -> DeckTransform:
    """Translation by ``-period`` along ``axis``: the far end maps back to the near end."""
    e = np.zeros(dim)
    e[axis] = period
    return DeckTransform(label, lambda x: x - e, lambda x: x + e, np.eye(dim))


def glide(label: str, dim: int, axis: int, period: float, flip: Sequence[int]) -> DeckTransform:
    """Translation by ``-period`` along ``axis`` composed with sign flips of ``flip``."""
    e = np.zeros(dim)
    e[axis] = period
    s = np.ones(dim)
    s[list(flip)] = -1.0

    return DeckTransform(
        label,
        lambda x: s * (x - e),
        lambda y: s * y + e,
        np.diag(s),
    )


@dataclass(frozen=True)
class LineSegment:
    """Straight chart segment ``s -> start + s (end - start)`` on ``[0, 1]``."""

    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, float))
        object.__setattr__(self, "end", np.asarray(self.end, float))

    def point(self, s):
        s = np.asarray(s, float)
        return self.start + s[..., None] * (self.end - self.start)

    def velocity(self, s):
        s = np.asarray(s, float)
        return np.broadcast_to(self.end - self.start, s.shape + self.start.shape)

    def reversed(self) -> "LineSegment":
        return LineSegment(self.end, self.start)

    def mapped(self, deck: DeckTransform) -> "LineSegment":
        return LineSegment(deck(self.start), deck(self.end))


@dataclass(frozen=True)
class LoopPath:
    """Piecewise-smooth loop at ``basepoint``.

    ``junction_decks[i]`` (or ``None``) is applied after segment ``i``;
    ``initial_deck`` is applied at the basepoint before the first segment.
    """

    basepoint: np.ndarray
    segments: tuple
    junction_decks: tuple = ()
    initial_deck: Optional[DeckTransform] = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "basepoint", np.asarray(self.basepoint, float))
        object.__setattr__(self, "segments", tuple(self.segments))
        decks = tuple(self.junction_decks) or (None,) * len(self.segments)
        if len(decks) != len(self.segments):
            raise ContractError("need one junction deck slot per segment")
        object.__setattr__(self, "junction_decks", decks)
        if not self.segments:
            raise ContractError("loop has no segments")

    def items(self):
        """The loop as an ordered list of ``("deck", D)`` and ``("segment", S)``."""
        out = []
        if self.initial_deck is not None:
            out.append(("deck", self.initial_deck))
        for seg, deck in zip(self.segments, self.junction_decks):
            out.append(("segment", seg))
            if deck is not None:
                out.append(("deck", deck))
        return out

    def closure_gaps(self) -> list[float]:
        """Chart distance at each junction and at the closing point."""
        gaps = []
        p = self.basepoint
        for kind, obj in self.items():
            if kind == "deck":
                p = obj(p)
            else:
                gaps.append(float(np.linalg.norm(obj.start - p)))
                p = obj.end
        gaps.append(float(np.linalg.norm(p - self.basepoint)))
        return gaps

    def validate(self, tol: float = 1e-12) -> None:
        gaps = self.closure_gaps()
        if max(gaps) > tol:
            raise ContractError(f"loop {self.label!r} is discontinuous or open: gaps {gaps}")

    def reversed(self) -> "LoopPath":
        items = [
            ("deck", obj.inverse()) if kind == "deck" else ("segment", obj.reversed())
            for kind, obj in reversed(self.items())
        ]
        return _loop_from_items(self.basepoint, items, self.label + "^-1")

    def points(self):
        """Sample chart points along every segment, for domain checks."""
        s = np.linspace(0.0, 1.0, 33)
        return np.concatenate([seg.point(s) for seg in self.segments])


def _loop_from_items(basepoint, items, label) -> LoopPath:
    """Rebuild a loop from an item list, merging consecutive deck actions."""
    initial, segs, decks, pending = None, [], [], None
    for kind, obj in items:
        if kind == "deck":
            pending = obj if pending is None else _compose(obj, pending)
            continue
        if segs:
            decks.append(pending)
        else:
            initial = pending
        pending = None
        segs.append(obj)
    decks.append(pending)
    return LoopPath(basepoint, segs, decks, initial, label)


def _compose(second: DeckTransform, first: DeckTransform) -> DeckTransform:
    return DeckTransform(
        f"{second.label}*{first.label}",
        lambda x: second.coord_map(first.coord_map(x)),
        lambda y: first.inverse_map(second.inverse_map(y)),
        second.linear_part @ first.linear_part,
    )


def polyline_loop(basepoint, vertices, label="", decks=None) -> LoopPath:
    """Closed polyline through ``vertices`` starting and ending at ``basepoint``."""
    pts = [np.asarray(basepoint, float)] + [np.asarray(v, float) for v in vertices]
    pts.append(pts[0])
    segs = [LineSegment(a, b) for a, b in zip(pts[:-1], pts[1:])]
    return LoopPath(pts[0], segs, decks or (), None, label)


# --------------------------------------------------------------------------
# structures and holonomy descriptors


@dataclass(frozen=True)
class ParallelStructure:
    """A parallel endomorphism field: a block projection or a complex structure."""

    tag: str  # "projection" or "complex_structure"
    name: str
    field: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def at(self, x, theta) -> np.ndarray:
        return np.asarray(self.field(np.asarray(x, float), np.asarray(theta, float)), float)


FAMILIES = ("trivial", "Z2_reflection", "SO2_block", "O2_block", "SO3", "U1_kaehler", "product_block")


@dataclass(frozen=True)
class HolonomyDescriptor:
    """Known holonomy group of a model, as a membership oracle.

    ``blocks`` partitions the coordinate indices into g-orthogonal factors;
    ``fixed_blocks`` lists indices on which the holonomy acts trivially.
    ``rotation_blocks`` are blocks required to have determinant +1.
    """

    family: str
    algebra_dim: int
    blocks: tuple = ()
    fixed_blocks: tuple = ()
    rotation_blocks: tuple = ()
    reflection: Optional[np.ndarray] = None
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown holonomy family {self.family!r}")


def _block_projector(n, idx):
    p = np.zeros((n, n))
    idx = list(idx)
    p[idx, idx] = 1.0
    return p


def holonomy_membership(desc: HolonomyDescriptor, p, g, structures=()) -> float:
    """Residual that is below ``desc.tolerance`` iff ``p`` lies in the group.

    ``structures`` is a sequence of ``(tag, matrix)`` pairs evaluated at the
    basepoint.  Every family includes ``||p^T g p - g|| / ||g||``; norms of the
    family-specific terms are divided by ``sqrt(n)``.
    """
    p = np.asarray(p, float)
    g = np.asarray(g, float)
    n = p.shape[0]
    if g.shape != (n, n):
        raise ContractError("dimension mismatch between map and metric")
    eye = np.eye(n)
    rn = np.sqrt(n)
    resid = np.linalg.norm(p.T @ g @ p - g) / np.linalg.norm(g)
    projections = [m for tag, m in structures if tag == "projection"]
    complex_structures = [m for tag, m in structures if tag == "complex_structure"]
    fam = desc.family

    if fam == "trivial":
        return float(resid + np.linalg.norm(p - eye) / rn)
    if fam == "Z2_reflection":
        if desc.reflection is None:
            raise ConfigurationError("Z2_reflection descriptor needs its reflection")
        r = np.asarray(desc.reflection, float)
        return float(resid + min(np.linalg.norm(p - eye), np.linalg.norm(p - r)) / rn)
    if fam == "SO3":
        return float(resid + abs(np.linalg.det(p) - 1.0))

    if fam in ("product_block", "O2_block") and not projections and len(desc.blocks) > 1:
        raise ConfigurationError(f"{fam} membership needs the projection structures")
    if fam == "U1_kaehler" and not complex_structures:
        raise ConfigurationError("U1_kaehler membership needs the complex structure")
    for proj in projections:
        resid += np.linalg.norm(p @ proj - proj @ p) / rn
    for j in complex_structures:
        resid += np.linalg.norm(p @ j - j @ p) / rn
    for idx in desc.fixed_blocks:
        pf = _block_projector(n, idx)
        resid += (np.linalg.norm((p - eye) @ pf) + np.linalg.norm(pf @ (p - eye))) / rn
    for idx in desc.rotation_blocks:
        idx = list(idx)
        resid += abs(np.linalg.det(p[np.ix_(idx, idx)]) - 1.0)
    return float(resid)


def block_determinant(p, idx) -> float:
    idx = list(idx)
    return float(np.linalg.det(np.asarray(p)[np.ix_(idx, idx)]))


# --------------------------------------------------------------------------
# models


@dataclass(eq=False)
class ManifoldModel:
    name: str
    dim: int
    coord_names: tuple
    chart_box: np.ndarray
    metric: Callable
    flow_rhs: Callable[[np.ndarray], np.ndarray]
    default_theta: np.ndarray
    basepoint: np.ndarray
    holonomy: HolonomyDescriptor
    description: str = ""
    deck_transforms: dict = field(default_factory=dict)
    parallel_structures: list = field(default_factory=list)
    loops: dict = field(default_factory=dict)
    closed_form_flow: Optional[Callable] = None
    symmetric: bool = False
    einstein: bool = False
    flat: bool = False
    domain_scale: float = 1.0
    analytic: bool = True
    admissible_fn: Optional[Callable] = None

    def __post_init__(self):
        self.chart_box = np.asarray(self.chart_box, float)
        self.default_theta = np.asarray(self.default_theta, float)
        self.basepoint = np.asarray(self.basepoint, float)
        self._engines = {}

    def admissible(self, theta) -> bool:
        theta = np.asarray(theta, float)
        if not np.all(np.isfinite(theta)):
            return False
        if self.admissible_fn is not None:
            return bool(self.admissible_fn(theta))
        return bool(np.all(theta > 0.0))

    def check_theta(self, theta):
        if not self.admissible(theta):
            raise ParameterError(f"{self.name}: coefficients {np.asarray(theta)} are not admissible")

    def check_point(self, x):
        x = np.asarray(x, float)
        lo, hi = self.chart_box[:, 0], self.chart_box[:, 1]
        if x.shape[-1] != self.dim or np.any(x < lo) or np.any(x > hi):
            bad = x.reshape(-1, self.dim)
            bad = bad[np.any((bad < lo) | (bad > hi), axis=1)]
            raise DomainError(f"{self.name}: chart point(s) {bad[:3]} outside {self.chart_box.tolist()}")

    def g(self, x, theta) -> np.ndarray:
        return np.asarray(self.metric(jnp.asarray(x, float), jnp.asarray(theta, float)))

    def structures_at(self, x, theta) -> list:
        return [(s.tag, s.at(x, theta)) for s in self.parallel_structures]

    def tags(self) -> list[str]:
        tags = sorted({s.tag for s in self.parallel_structures})
        return ["kaehler" if t == "complex_structure" else t for t in tags]


# metric building blocks ---------------------------------------------------


def _sphere_block(th_lat, r2):
    return r2 * jnp.array([[1.0, 0.0], [0.0, jnp.sin(th_lat) ** 2]])


def _block_diag(*blocks):
    n = sum(b.shape[0] for b in blocks)
    out = jnp.zeros((n, n))
    k = 0
    for b in blocks:
        m = b.shape[0]
        out = out.at[k : k + m, k : k + m].set(b)
        k += m
    return out


def _euler_forms(x):
    """Left-invariant coframe of SU(2) in Euler angles ``(theta, phi, psi)``.

    ``d sigma_3 = -sigma_1 ^ sigma_2`` and cyclically.
    """
    t, _, s = x[0], x[1], x[2]
    s1 = jnp.stack([jnp.sin(s), -jnp.sin(t) * jnp.cos(s), 0.0 * t])
    s2 = jnp.stack([jnp.cos(s), jnp.sin(t) * jnp.sin(s), 0.0 * t])
    s3 = jnp.stack([0.0 * t, jnp.cos(t), 1.0 + 0.0 * t])
    return s1, s2, s3


def berger_block(x, lam):
    s1, s2, s3 = _euler_forms(x)
    return lam[0] * jnp.outer(s1, s1) + lam[1] * jnp.outer(s2, s2) + lam[2] * jnp.outer(s3, s3)


def milnor_rhs(lam) -> np.ndarray:
    """Ricci flow of ``lam_1 s1^2 + lam_2 s2^2 + lam_3 s3^2`` on SU(2).

    With unit structure constants the Ricci tensor is diagonal in the coframe,
    ``Rc(X_1, X_1) = (lam_1^2 - (lam_2 - lam_3)^2) / (2 lam_2 lam_3)`` and
    cyclically, so ``d lam_i / dt = -2 Rc(X_i, X_i)``.
    """
    a, b, c = (float(v) for v in lam[:3])
    return -np.array(
        [
            (a * a - (b - c) ** 2) / (b * c),
            (b * b - (a - c) ** 2) / (a * c),
            (c * c - (a - b) ** 2) / (a * b),
        ]
    )


def _sphere_j(x):
    s = np.sin(x[0])
    return np.array([[0.0, -s], [1.0 / s, 0.0]])


_J0 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _const(m):
    m = np.asarray(m, float)
    return lambda x, th: m


def _projection_pair(n, first, second, names):
    return [
        ParallelStructure("projection", names[0], _const(_block_projector(n, first))),
        ParallelStructure("projection", names[1], _const(_block_projector(n, second))),
    ]


def _box(*pairs):
    return np.array(pairs, float)


LAT = (POLE_MARGIN, np.pi - POLE_MARGIN)
WIDE = (-4.0 * np.pi, 4.0 * np.pi)
PSI = (-8.0 * np.pi, 8.0 * np.pi)


def _flat_torus(dim: int) -> ManifoldModel:
    q = np.array([0.2, 0.3, 0.4][:dim])
    decks = {f"wrap_{i}": shift(f"wrap_{i}", dim, i, 1.0) for i in range(dim)}
    verts = [q + 0.3 * np.eye(dim)[0], q + 0.3 * np.eye(dim)[0] + 0.2 * np.eye(dim)[1], q + 0.2 * np.eye(dim)[1]]
    loops = {"square": polyline_loop(q, verts, "square")}
    for i in range(dim):
        e = np.eye(dim)[i]
        loops[f"wrap_{i}"] = LoopPath(q, [LineSegment(q, q + e)], [decks[f"wrap_{i}"]], label=f"wrap_{i}")
    return ManifoldModel(
        name=f"flat_torus_{dim}",
        dim=dim,
        coord_names=tuple(f"x{i}" for i in range(dim)),
        chart_box=_box(*[(-3.0, 3.0)] * dim),
        metric=lambda x, th: jnp.diag(th**2 + 0.0 * x),
        flow_rhs=lambda th: np.zeros_like(np.asarray(th, float)),
        default_theta=np.ones(dim),
        basepoint=q,
        holonomy=HolonomyDescriptor("trivial", 0),
        description=f"flat T^{dim}, theta = lattice scales",
        deck_transforms=decks,
        loops=loops,
        closed_form_flow=lambda th0, t: np.asarray(th0, float),
        symmetric=True,
        einstein=True,
        flat=True,
    )


def _klein_bottle() -> ManifoldModel:
    q = np.array([0.2, 0.3])
    decks = {
        "glide_x": glide("glide_x", 2, 0, 1.0, [1]),
        "wrap_y": shift("wrap_y", 2, 1, 1.0),
    }
    loops = {
        "deck_x": LoopPath(
            q,
            [LineSegment(q, q + [1.0, 0.0]), LineSegment([0.2, -0.3], q)],
            [decks["glide_x"], None],
            label="deck_x",
        ),
        "wrap_y": LoopPath(q, [LineSegment(q, q + [0.0, 1.0])], [decks["wrap_y"]], label="wrap_y"),
        "square": polyline_loop(q, [[0.5, 0.3], [0.5, 0.6], [0.2, 0.6]], "square"),
    }
    return ManifoldModel(
        name="klein_bottle",
        dim=2,
        coord_names=("x", "y"),
        chart_box=_box((-3.0, 3.0), (-3.0, 3.0)),
        metric=lambda x, th: jnp.diag(th**2 + 0.0 * x),
        flow_rhs=lambda th: np.zeros_like(np.asarray(th, float)),
        default_theta=np.ones(2),
        basepoint=q,
        holonomy=HolonomyDescriptor("Z2_reflection", 0, reflection=np.diag([1.0, -1.0])),
        description="flat Klein bottle, deck (x, y) ~ (x + 1, -y)",
        deck_transforms=decks,
        loops=loops,
        closed_form_flow=lambda th0, t: np.asarray(th0, float),
        symmetric=True,
        einstein=True,
        flat=True,
    )


def _sphere_loops(q, decks, dim, phi_axis=1, extra=()):
    e_phi = np.eye(dim)[phi_axis]
    lat = LoopPath(q, [LineSegment(q, q + TWO_PI * e_phi)], [decks["wrap_phi"]], label="latitude")
    pad = [0.0] * (dim - 2)
    tri = polyline_loop(q, [q + np.array([0.4, 0.0] + pad), q + np.array([0.2, 0.7] + pad)], "triangle")
    return {"latitude": lat, "triangle": tri}


def _round_sphere(kaehler: bool) -> ManifoldModel:
    q = np.array([np.pi / 3, 0.0])
    decks = {"wrap_phi": shift("wrap_phi", 2, 1, TWO_PI)}
    structures = []
    if kaehler:
        structures = [ParallelStructure("complex_structure", "J", lambda x, th: _sphere_j(x))]
    return ManifoldModel(
        name="kaehler_sphere" if kaehler else "round_sphere",
        dim=2,
        coord_names=("colatitude", "phi"),
        chart_box=_box(LAT, WIDE),
        metric=lambda x, th: _sphere_block(x[0], th[0]),
        flow_rhs=lambda th: np.array([-2.0]),
        default_theta=np.array([1.0]),
        basepoint=q,
        holonomy=(
            HolonomyDescriptor("U1_kaehler", 1)
            if kaehler
            else HolonomyDescriptor("SO2_block", 1, blocks=((0, 1),), rotation_blocks=((0, 1),))
        ),
        description="round S^2 of area-radius r, theta = (r^2,)"
        + (", J = quarter turn in the metric frame" if kaehler else ""),
        deck_transforms=decks,
        parallel_structures=structures,
        loops=_sphere_loops(q, decks, 2),
        closed_form_flow=lambda th0, t: np.asarray(th0, float) - np.array([2.0 * t]),
        symmetric=True,
        einstein=True,
        domain_scale=np.pi,
    )


def _s2_s1_metric(x, th):
    return _block_diag(_sphere_block(x[0], th[0]), jnp.array([[th[1] ** 2]]))


def _s2_x_s1() -> ManifoldModel:
    q = np.array([np.pi / 3, 0.0, 0.0])
    decks = {"wrap_phi": shift("wrap_phi", 3, 1, TWO_PI), "wrap_z": shift("wrap_z", 3, 2, 1.0)}
    loops = _sphere_loops(q, decks, 3)
    loops["wrap_z"] = LoopPath(q, [LineSegment(q, q + [0, 0, 1.0])], [decks["wrap_z"]], label="wrap_z")
    loops["mixed"] = polyline_loop(q, [q + [0.3, 0.0, 0.0], q + [0.3, 0.8, 0.5], q + [0.0, 0.0, 0.5]], "mixed")
    return ManifoldModel(
        name="s2_x_s1",
        dim=3,
        coord_names=("colatitude", "phi", "z"),
        chart_box=_box(LAT, WIDE, (-3.0, 3.0)),
        metric=_s2_s1_metric,
        flow_rhs=lambda th: np.array([-2.0, 0.0]),
        default_theta=np.array([1.0, 1.0]),
        basepoint=q,
        holonomy=HolonomyDescriptor(
            "product_block", 1, blocks=((0, 1), (2,)), fixed_blocks=((2,),), rotation_blocks=((0, 1),)
        ),
        description="product S^2 x S^1, theta = (r^2, L)",
        deck_transforms=decks,
        parallel_structures=_projection_pair(3, [0, 1], [2], ("P_sphere", "P_circle")),
        loops=loops,
        closed_form_flow=lambda th0, t: np.asarray(th0, float) + np.array([-2.0 * t, 0.0]),
        symmetric=True,
        domain_scale=np.pi,
    )


def _reflection_mapping_torus() -> ManifoldModel:
    q = np.array([np.pi / 3, 0.4, 0.0])
    decks = {
        "glide_z": glide("glide_z", 3, 2, 1.0, [1]),
        "wrap_phi": shift("wrap_phi", 3, 1, TWO_PI),
    }
    loops = {
        "deck_z": LoopPath(
            q,
            [LineSegment(q, q + [0, 0, 1.0]), LineSegment([np.pi / 3, -0.4, 0.0], q)],
            [decks["glide_z"], None],
            label="deck_z",
        ),
        "deck_z_tilted": LoopPath(
            q,
            [LineSegment(q, [np.pi / 3 + 0.3, 0.9, 1.0]), LineSegment([np.pi / 3 + 0.3, -0.9, 0.0], q)],
            [decks["glide_z"], None],
            label="deck_z_tilted",
        ),
        "latitude": LoopPath(q, [LineSegment(q, q + [0, TWO_PI, 0])], [decks["wrap_phi"]], label="latitude"),
        "triangle": polyline_loop(q, [q + [0.4, 0.0, 0.0], q + [0.2, 0.7, 0.3]], "triangle"),
    }
    return ManifoldModel(
        name="reflection_mapping_torus",
        dim=3,
        coord_names=("colatitude", "phi", "z"),
        chart_box=_box(LAT, WIDE, (-3.0, 3.0)),
        metric=_s2_s1_metric,
        flow_rhs=lambda th: np.array([-2.0, 0.0]),
        default_theta=np.array([1.0, 1.0]),
        basepoint=q,
        holonomy=HolonomyDescriptor("O2_block", 1, blocks=((0, 1), (2,)), fixed_blocks=((2,),)),
        description="mapping torus of a reflection of S^2, (p, z + 1) ~ (rho(p), z), theta = (r^2, L)",
        deck_transforms=decks,
        parallel_structures=_projection_pair(3, [0, 1], [2], ("P_sphere", "P_circle")),
        loops=loops,
        closed_form_flow=lambda th0, t: np.asarray(th0, float) + np.array([-2.0 * t, 0.0]),
        symmetric=True,
        domain_scale=np.pi,
    )


def _berger() -> ManifoldModel:
    q = np.array([1.0, 0.3, 0.2])
    decks = {"wrap_phi": shift("wrap_phi", 3, 1, TWO_PI), "wrap_psi": shift("wrap_psi", 3, 2, 2 * TWO_PI)}
    loops = {
        "phi_circle": LoopPath(q, [LineSegment(q, q + [0, TWO_PI, 0])], [decks["wrap_phi"]], label="phi_circle"),
        "psi_circle": LoopPath(q, [LineSegment(q, q + [0, 0, 2 * TWO_PI])], [decks["wrap_psi"]], label="psi_circle"),
        "box": polyline_loop(q, [q + [0.4, 0, 0], q + [0.4, 0.6, 0], q + [0.1, 0.6, 0.9], q + [0, 0, 0.9]], "box"),
    }
    return ManifoldModel(
        name="berger_su2",
        dim=3,
        coord_names=("theta", "phi", "psi"),
        chart_box=_box(LAT, WIDE, PSI),
        metric=berger_block,
        flow_rhs=milnor_rhs,
        default_theta=np.array([1.0, 1.5, 2.0]),
        basepoint=q,
        holonomy=HolonomyDescriptor("SO3", 3),
        description="left-invariant metric l1 s1^2 + l2 s2^2 + l3 s3^2 on SU(2), Euler-angle chart",
        deck_transforms=decks,
        loops=loops,
        domain_scale=np.pi,
    )


def _su2_x_s1() -> ManifoldModel:
    q = np.array([1.0, 0.3, 0.2, 0.0])
    decks = {
        "wrap_phi": shift("wrap_phi", 4, 1, TWO_PI),
        "wrap_psi": shift("wrap_psi", 4, 2, 2 * TWO_PI),
        "wrap_z": shift("wrap_z", 4, 3, 1.0),
    }
    loops = {
        "mixed": polyline_loop(
            q, [q + [0.4, 0, 0, 0.3], q + [0.4, 0.6, 0, 0.6], q + [0.1, 0.6, 0.9, 0.2], q + [0, 0, 0.9, 0]], "mixed"
        ),
        "phi_circle": LoopPath(q, [LineSegment(q, q + [0, TWO_PI, 0, 0])], [decks["wrap_phi"]], label="phi_circle"),
        "wrap_z": LoopPath(q, [LineSegment(q, q + [0, 0, 0, 1.0])], [decks["wrap_z"]], label="wrap_z"),
        "helix": LoopPath(
            q, [LineSegment(q, q + [0, TWO_PI, 0, 1.0])], [_compose(decks["wrap_phi"], decks["wrap_z"])], label="helix"
        ),
    }
    return ManifoldModel(
        name="su2_x_s1",
        dim=4,
        coord_names=("theta", "phi", "psi", "z"),
        chart_box=_box(LAT, WIDE, PSI, (-3.0, 3.0)),
        metric=lambda x, th: _block_diag(berger_block(x, th), jnp.array([[th[3] ** 2]])),
        flow_rhs=lambda th: np.concatenate([milnor_rhs(th[:3]), [0.0]]),
        default_theta=np.array([1.0, 1.5, 2.0, 1.0]),
        basepoint=q,
        holonomy=HolonomyDescriptor(
            "product_block", 3, blocks=((0, 1, 2), (3,)), fixed_blocks=((3,),), rotation_blocks=((0, 1, 2),)
        ),
        description="Berger SU(2) x flat S^1, theta = (l1, l2, l3, L)",
        deck_transforms=decks,
        parallel_structures=_projection_pair(4, [0, 1, 2], [3], ("P_su2", "P_circle")),
        loops=loops,
        domain_scale=np.pi,
    )


def _kaehler_flat_t4() -> ManifoldModel:
    q = np.array([0.2, 0.3, 0.4, 0.5])
    decks = {f"wrap_{i}": shift(f"wrap_{i}", 4, i, 1.0) for i in range(4)}
    j = np.kron(np.eye(2), _J0)
    loops = {
        "square": polyline_loop(q, [q + [0.3, 0, 0, 0], q + [0.3, 0, 0.2, 0], q + [0, 0.1, 0.2, 0]], "square"),
        "wrap_0": LoopPath(q, [LineSegment(q, q + [1.0, 0, 0, 0])], [decks["wrap_0"]], label="wrap_0"),
        "wrap_3": LoopPath(q, [LineSegment(q, q + [0, 0, 0, 1.0])], [decks["wrap_3"]], label="wrap_3"),
    }
    return ManifoldModel(
        name="kaehler_flat_t4",
        dim=4,
        coord_names=("x0", "x1", "x2", "x3"),
        chart_box=_box(*[(-3.0, 3.0)] * 4),
        metric=lambda x, th: jnp.diag(jnp.array([th[0], th[0], th[1], th[1]]) ** 2 + 0.0 * x),
        flow_rhs=lambda th: np.zeros_like(np.asarray(th, float)),
        default_theta=np.array([1.0, 1.3]),
        basepoint=q,
        holonomy=HolonomyDescriptor("trivial", 0),
        description="flat T^4 with constant complex structure, theta = (a, b)",
        deck_transforms=decks,
        parallel_structures=[ParallelStructure("complex_structure", "J", _const(j))],
        loops=loops,
        closed_form_flow=lambda th0, t: np.asarray(th0, float),
        symmetric=True,
        einstein=True,
        flat=True,
    )


def _kaehler_s2_x_t2() -> ManifoldModel:
    q = np.array([np.pi / 3, 0.0, 0.2, 0.3])
    decks = {
        "wrap_phi": shift("wrap_phi", 4, 1, TWO_PI),
        "wrap_x": shift("wrap_x", 4, 2, 1.0),
        "wrap_y": shift("wrap_y", 4, 3, 1.0),
    }
    loops = _sphere_loops(q, decks, 4)
    loops["wrap_x"] = LoopPath(q, [LineSegment(q, q + [0, 0, 1.0, 0])], [decks["wrap_x"]], label="wrap_x")
    loops["mixed"] = polyline_loop(q, [q + [0.3, 0, 0.2, 0], q + [0.3, 0.8, 0.2, 0.4], q + [0, 0, 0, 0.4]], "mixed")

    def j_field(x, th):
        out = np.zeros((4, 4))
        out[:2, :2] = _sphere_j(x)
        out[2:, 2:] = _J0
        return out

    return ManifoldModel(
        name="kaehler_s2_x_t2",
        dim=4,
        coord_names=("colatitude", "phi", "x", "y"),
        chart_box=_box(LAT, WIDE, (-3.0, 3.0), (-3.0, 3.0)),
        metric=lambda x, th: _block_diag(_sphere_block(x[0], th[0]), th[1] ** 2 * jnp.eye(2)),
        flow_rhs=lambda th: np.array([-2.0, 0.0]),
        default_theta=np.array([1.0, 1.0]),
        basepoint=q,
        holonomy=HolonomyDescriptor(
            "U1_kaehler", 1, blocks=((0, 1), (2, 3)), fixed_blocks=((2, 3),), rotation_blocks=((0, 1),)
        ),
        description="Kaehler product S^2 x flat T^2, theta = (r^2, a)",
        deck_transforms=decks,
        parallel_structures=[ParallelStructure("complex_structure", "J", j_field)]
        + _projection_pair(4, [0, 1], [2, 3], ("P_sphere", "P_torus")),
        loops=loops,
        closed_form_flow=lambda th0, t: np.asarray(th0, float) + np.array([-2.0 * t, 0.0]),
        symmetric=True,
        domain_scale=np.pi,
    )


_BUILDERS = {
    "flat_torus_2": lambda: _flat_torus(2),
    "flat_torus_3": lambda: _flat_torus(3),
    "klein_bottle": _klein_bottle,
    "round_sphere": lambda: _round_sphere(False),
    "kaehler_sphere": lambda: _round_sphere(True),
    "s2_x_s1": _s2_x_s1,
    "reflection_mapping_torus": _reflection_mapping_torus,
    "berger_su2": _berger,
    "su2_x_s1": _su2_x_s1,
    "kaehler_flat_t4": _kaehler_flat_t4,
    "kaehler_s2_x_t2": _kaehler_s2_x_t2,
}

_CACHE: dict = {}


def model_names() -> list[str]:
    return list(_BUILDERS)


def get_model(name: str) -> ManifoldModel:
    """Catalog model by name; instances are shared so compiled kernels are reused."""
    if name not in _BUILDERS:
        raise ConfigurationError(f"unknown model {name!r}; known: {', '.join(_BUILDERS)}")
    if name not in _CACHE:
        _CACHE[name] = _BUILDERS[name]()
    return _CACHE[name]


def catalog_models() -> list[ManifoldModel]:
    return [get_model(n) for n in _BUILDERS]
