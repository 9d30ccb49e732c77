"""Zonotope algebra and the geometric queries built on top of it.

A zonotope <c, G> = {c + G b : |b|_inf <= 1} is closed under Minkowski
sums (centers add, generators concatenate) and linear maps (both factors
are mapped), which is what makes it the working representation for action
spaces, relevant action sets and disturbance sets throughout the package.

Membership and boundary queries are resolved through the LP layer:
    x in <c, G>           <=>  min ||g||_inf s.t. G g = x - c   is <= 1
    boundary along d      via  max a s.t. x + a d = c + G g, |g|_inf <= 1
Directions are not required to be normalized; boundary distances are
reported in units of the caller's direction vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lp import LinearProgram, LPSolverError, LPStatus, solve_lp

__all__ = [
    "Zonotope",
    "IntervalBox",
    "Halfspace",
    "GeometryError",
    "minkowski_sum",
    "linear_map",
    "support_function",
    "contains_point",
    "boundary_point",
    "ball_underapprox",
    "vertices_2d",
]

MEMBERSHIP_TOL = 1e-8


class GeometryError(ValueError):
    """Bad set data or an unsatisfiable geometric precondition."""


class Zonotope:
    """Center plus generator matrix; ``generators.shape == (dim, P)``.

    P = 0 is legal and denotes the single point {center}. Zero-norm
    generator columns are accepted and kept as-is (callers relying on
    column indices get predictability; nothing prunes behind their back).
    Instances are treated as immutable once constructed; queries may cache
    derived data (the 2-d facet representation) on the instance.
    """

    __slots__ = ("center", "generators", "_facets2d")

    def __init__(self, center, generators=None):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if generators is None:
            generators = np.zeros((center.size, 0))
        generators = np.asarray(generators, dtype=float)
        if generators.ndim != 2:
            raise GeometryError("generators must be a 2-d matrix")
        if center.ndim != 1 or generators.shape[0] != center.size:
            raise GeometryError(
                f"center of length {center.size} does not match generator "
                f"rows {generators.shape[0]}"
            )
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(generators))):
            raise GeometryError("zonotope data must be finite")
        self.center = center
        self.generators = generators
        self._facets2d = None

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    def interval_hull(self) -> "IntervalBox":
        """Tightest axis-aligned box containing the zonotope."""
        radius = np.abs(self.generators).sum(axis=1)
        return IntervalBox(self.center - radius, self.center + radius)

    def to_json_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "generators": [row.tolist() for row in self.generators],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Zonotope":
        return cls(np.array(data["center"]), np.array(data["generators"]))

    def __repr__(self):
        return f"Zonotope(dim={self.dim}, P={self.num_generators})"


@dataclass
class IntervalBox:
    """Axis-aligned box, lower <= upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise GeometryError("lower/upper must be vectors of equal length")
        if not np.all(np.isfinite(self.lower)) or not np.all(np.isfinite(self.upper)):
            raise GeometryError("box bounds must be finite")
        if np.any(self.lower > self.upper):
            raise GeometryError("box requires lower <= upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def as_zonotope(self) -> Zonotope:
        return Zonotope(self.center, np.diag(self.half_width))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, size=shape)


@dataclass
class Halfspace:
    """{x : normal'x <= offset}; the normal must be nonzero."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        self.normal = np.atleast_1d(np.asarray(self.normal, dtype=float))
        self.offset = float(self.offset)
        if np.linalg.norm(self.normal) <= 0.0:
            raise GeometryError("halfspace normal must be nonzero")


def _check_same_dim(a, b, what: str):
    if a != b:
        raise GeometryError(f"dimension mismatch in {what}: {a} vs {b}")


def minkowski_sum(z1: Zonotope, z2: Zonotope) -> Zonotope:
    """Pointwise sum of the two sets: centers add, generators concatenate."""
    _check_same_dim(z1.dim, z2.dim, "minkowski_sum")
    return Zonotope(z1.center + z2.center, np.hstack([z1.generators, z2.generators]))


def linear_map(m: np.ndarray, z: Zonotope) -> Zonotope:
    """Image of the zonotope under the matrix m (maps center and generators)."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    _check_same_dim(m.shape[1], z.dim, "linear_map")
    return Zonotope(m @ z.center, m @ z.generators)


def support_function(z: Zonotope, direction) -> float:
    """max over the zonotope of direction'x  =  l'c + sum_i |l'g_i|."""
    l = np.asarray(direction, dtype=float)
    _check_same_dim(l.size, z.dim, "support_function")
    if not np.all(np.isfinite(l)):
        raise GeometryError("direction must be finite")
    return float(l @ z.center + np.abs(l @ z.generators).sum())


def _facets_2d(z: Zonotope):
    """Facet normals/offsets of a full-rank 2-d zonotope, cached.

    Each nonzero generator contributes the normal perpendicular to it;
    the centered body is |n'(x - c)| <= offset with offset the support
    of the centered zonotope in direction n. Returns None when the body
    is not robustly full-dimensional (callers then take the LP route).
    """
    if z._facets2d is not None:
        return z._facets2d if z._facets2d is not False else None
    g = z.generators
    norms = np.linalg.norm(g, axis=0)
    live = norms > 1e-14
    gl = g[:, live]
    if gl.shape[1] < 2 or np.linalg.matrix_rank(gl, tol=1e-12 * norms.max()) < 2:
        z._facets2d = False
        return None
    normals = np.stack([-gl[1], gl[0]], axis=1) / norms[live][:, None]
    offsets = np.abs(normals @ g).sum(axis=1)
    if offsets.min() <= 1e-14:
        z._facets2d = False
        return None
    z._facets2d = (normals, offsets)
    return z._facets2d


def _gauge(z: Zonotope, x: np.ndarray) -> float | None:
    """min ||g||_inf with c + G g = x for 2-d bodies; None -> use the LP."""
    facets = _facets_2d(z) if z.dim == 2 else None
    if facets is None:
        return None
    normals, offsets = facets
    return float((np.abs(normals @ (x - z.center)) / offsets).max())


def contains_point(z: Zonotope, x, tol: float = MEMBERSHIP_TOL) -> bool:
    """Membership: does some |g|_inf <= 1 + tol give c + G g = x?

    Resolved as the LP  min t s.t. G g = x - c, |g_i| <= t  (the gauge of
    x in the zonotope); full-rank 2-d bodies evaluate the identical gauge
    through their facet form. LP solver failure propagates as an
    exception; it is never folded into a False answer.
    """
    x = np.asarray(x, dtype=float)
    _check_same_dim(x.size, z.dim, "contains_point")
    if tol < 0:
        raise GeometryError("tol must be nonnegative")
    p = z.num_generators
    delta = x - z.center
    if p == 0:
        return bool(np.abs(delta).max(initial=0.0) <= tol)
    gauge = _gauge(z, x)
    if gauge is not None:
        return bool(gauge <= 1.0 + tol)
    n = z.dim
    obj = np.zeros(p + 1)
    obj[-1] = 1.0
    a_eq = np.hstack([z.generators, np.zeros((n, 1))])
    ident = np.eye(p)
    ones = np.ones((p, 1))
    a_in = np.vstack([np.hstack([ident, -ones]), np.hstack([-ident, -ones])])
    b_in = np.zeros(2 * p)
    res = solve_lp(LinearProgram(obj, a_eq=a_eq, b_eq=delta, a_in=a_in, b_in=b_in))
    if res.status is LPStatus.INFEASIBLE:
        return False  # x - c is outside the generator span
    if not res.is_optimal:
        raise LPSolverError(f"membership LP ended with status {res.status}")
    return bool(res.objective <= 1.0 + tol)


def boundary_point(z: Zonotope, x, direction) -> tuple[np.ndarray, float]:
    """Farthest point of the zonotope along the ray x + a*d, a >= 0.

    Solves  max a  s.t.  x + a d = c + G g, |g|_inf <= 1  and returns
    (point, a). ``a`` is in units of ``d``; the ray-mask ratio of two such
    distances along a shared direction is therefore scale-free. Full-rank
    2-d bodies clip the ray against their facets, which is the same
    program solved in closed form. Raises GeometryError when x is not
    inside the zonotope (infeasible ray LP).
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    _check_same_dim(x.size, z.dim, "boundary_point")
    _check_same_dim(d.size, z.dim, "boundary_point direction")
    if np.linalg.norm(d) <= 0.0:
        raise GeometryError("direction must be nonzero")

    facets = _facets_2d(z) if z.dim == 2 else None
    if facets is not None:
        normals, offsets = facets
        w = normals @ (x - z.center)
        if (np.abs(w) / offsets).max() > 1.0 + MEMBERSHIP_TOL:
            raise GeometryError(
                "boundary_point: start point is not inside the zonotope"
            )
        dd = normals @ d
        active = np.abs(dd) > 1e-14
        if np.any(active):
            sgn = np.sign(dd[active])
            alpha = float(
                ((offsets[active] - sgn * w[active]) / np.abs(dd[active])).min()
            )
            return x + max(alpha, 0.0) * d, max(alpha, 0.0)

    n, p = z.dim, z.num_generators
    # Variables [g (P), a]; maximize a == minimize -a.
    obj = np.zeros(p + 1)
    obj[-1] = -1.0
    a_eq = np.hstack([z.generators, -d.reshape(n, 1)])
    b_eq = x - z.center
    bounds = [(-1.0, 1.0)] * p + [(0.0, None)]
    res = solve_lp(LinearProgram(obj, a_eq=a_eq, b_eq=b_eq, bounds=bounds))
    if res.status is LPStatus.INFEASIBLE:
        raise GeometryError("boundary_point: start point is not inside the zonotope")
    if not res.is_optimal:
        raise LPSolverError(f"boundary LP ended with status {res.status}")
    alpha = float(res.x[-1])
    return x + alpha * d, alpha


def vertices_2d(z: Zonotope) -> np.ndarray:
    """Vertices of a 2-d zonotope in counterclockwise order.

    Classic zonogon construction: orient every generator into the upper
    half-plane, sort by angle, then walk the boundary adding 2 g_i in
    angular order (the lower chain is the point reflection through the
    center). Zero generators collapse to fewer vertices; a point returns
    just its center.
    """
    if z.dim != 2:
        raise GeometryError("vertices_2d requires a 2-d zonotope")
    g = z.generators
    norms = np.linalg.norm(g, axis=0)
    g = g[:, norms > 1e-14]
    p = g.shape[1]
    if p == 0:
        return z.center.reshape(1, 2)
    flip = (g[1] < 0) | ((g[1] == 0) & (g[0] < 0))
    g = g * np.where(flip, -1.0, 1.0)
    order = np.argsort(np.arctan2(g[1], g[0]), kind="stable")
    g = g[:, order]
    start = z.center - g.sum(axis=1)
    upper = [start]
    for i in range(p):
        upper.append(upper[-1] + 2.0 * g[:, i])
    lower = [2.0 * z.center - v for v in upper[1:-1]]
    verts = np.array(upper + lower)
    # Collapse duplicates from collinear generators.
    keep = np.ones(len(verts), dtype=bool)
    for i in range(len(verts)):
        if np.linalg.norm(verts[i] - verts[i - 1]) < 1e-14:
            keep[i] = False
    return verts[keep]


def _unit_directions(dim: int, count: int) -> np.ndarray:
    """Deterministic spread of unit directions, antipodal pairs collapsed.

    dim 2 uses exactly equally spaced angles on the half circle. Higher
    dimensions use coordinate axes, then two-coordinate diagonals, then a
    fixed-seed quasi-uniform fill.
    """
    if dim == 1:
        return np.ones((count, 1))
    if dim == 2:
        angles = np.pi * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dirs = [np.eye(dim)[i] for i in range(min(dim, count))]
    for i in range(dim):
        for j in range(i + 1, dim):
            for s in (1.0, -1.0):
                if len(dirs) >= count:
                    break
                v = np.zeros(dim)
                v[i], v[j] = 1.0, s
                dirs.append(v / np.sqrt(2.0))
    rng = np.random.default_rng(1234567)
    while len(dirs) < count:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            continue
        v /= norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        dirs.append(v)
    return np.array(dirs[:count])


def _max_unit_support_2d(generators: np.ndarray) -> float:
    """Exact max over unit directions of sum_i |l'g_i| for 2-d zonotopes.

    The maximizing direction of the piecewise-sinusoidal support lies in
    one of the arcs cut by the generator perpendiculars; on each arc the
    support is l'(G s) for a fixed sign pattern s, maximized by ||G s||_2.
    """
    p = generators.shape[1]
    if p == 0:
        return 0.0
    kinks = np.mod(np.arctan2(generators[1], generators[0]) + 0.5 * np.pi, np.pi)
    probes = np.sort(np.concatenate([kinks, kinks + np.pi]))
    mids = (probes + np.roll(probes, -1)) / 2.0
    mids[-1] += np.pi  # wrap the last arc
    best = 0.0
    for phi in mids:
        v = np.array([np.cos(phi), np.sin(phi)])
        signs = np.sign(v @ generators)
        signs[signs == 0] = 1.0
        best = max(best, float(np.linalg.norm(generators @ signs)))
    return best


def ball_underapprox(dim: int, num_generators: int, radius: float) -> Zonotope:
    """Origin-centered zonotope inscribed in the L2 ball of given radius.

    Generators point along spread unit directions and share one scale,
    chosen so a certified upper bound on the support over all unit
    directions equals the radius. In 2-d the bound is exact; in higher
    dimensions min(sqrt(P)*sigma_max(G), sum ||g_i||) is used, which keeps
    containment guaranteed at the price of some conservatism.
    """
    if radius <= 0:
        raise GeometryError("radius must be positive")
    if num_generators < dim:
        raise GeometryError(
            f"need at least {dim} generators to span {dim} dimensions"
        )
    u = _unit_directions(dim, num_generators).T  # dim x P
    if dim == 1:
        rho = float(num_generators)
    elif dim == 2:
        rho = _max_unit_support_2d(u)
    else:
        sigma = np.linalg.svd(u, compute_uv=False)[0]
        rho = min(np.sqrt(num_generators) * sigma, float(num_generators))
    return Zonotope(np.zeros(dim), (radius / rho) * u)
