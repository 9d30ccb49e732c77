"""Action-masking transforms as policy wrappers.

Each mask owns its forward map onto the relevant action set A^r, its
sampling path, its log-probability under the relevant policy, and the
exact parameter score used by the PPO update:

* ray: bijective radial map from the action box onto A^r through the set
  center. The change-of-variables determinant does not depend on the
  policy parameters, so the score equals the base Gaussian score at the
  pre-map sample.
* generator: the policy lives in the latent box [-1,1]^P of the zonotope;
  executed actions are c + G beta. The relevant policy is the pushforward
  normal N(G mu + c, G Sigma G'), whose mean/covariance scores are
  evaluated in closed form.
* distributional: the base density truncated to A^r and renormalized by
  its enclosed mass. Sampling runs hit-and-run (N^3 iterations before
  accepting); the mass comes from adaptive subdivision cubature; the
  returned gradient drops the integral term (treated as a constant), so
  it is again the base score, now at the executed action.
* replacement: environment-side baseline; out-of-set actions are replaced
  by a uniform hit-and-run draw from A^r while updates keep using the
  original action's base log-probability.
* none: plain clipped Gaussian policy.

Every sampling path ends with a membership check of the executed action
(tolerance 1e-6); a violation is a masking bug and raises, never executes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .geometry import (
    IntervalBox,
    Zonotope,
    boundary_point,
    contains_point,
    vertices_2d,
)
from .policy import gaussian_log_prob

__all__ = [
    "MaskError",
    "CubatureError",
    "DiagonalGaussianDensity",
    "UniformDensity",
    "hit_and_run_sample",
    "cubature_integral",
    "ray_map",
    "ray_unmap",
    "generator_sample",
    "generator_log_prob",
    "generator_score",
    "dist_log_prob_and_score",
    "replacement_filter",
    "MaskedSample",
    "MASK_KINDS",
    "make_mask",
    "NoMask",
    "RayMask",
    "GeneratorMask",
    "DistributionalMask",
    "ReplacementMask",
]

MASK_KINDS = ("none", "replacement", "ray", "generator", "distributional")

EXEC_MEMBERSHIP_TOL = 1e-6
INTEGRAL_FLOOR = 1e-300
COV_JITTER = 1e-9
CHORD_GRID = 256


class MaskError(RuntimeError):
    """A masking-layer contract violation (not an environment error)."""


_LEGGAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _LEGGAUSS_CACHE:
        _LEGGAUSS_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _LEGGAUSS_CACHE[order]


class CubatureError(RuntimeError):
    """Subdivision cap hit; carries the best estimate and error bound."""

    def __init__(self, estimate: float, error_bound: float):
        super().__init__(
            f"cubature did not converge: estimate {estimate:.6e}, "
            f"error bound {error_bound:.3e}"
        )
        self.estimate = estimate
        self.error_bound = error_bound


# ------------------------------------------------------------------- densities


class DiagonalGaussianDensity:
    """Diagonal normal with exact axis-aligned box masses."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(points) - self.mean) / self.std
        return (
            -0.5 * (z**2).sum(axis=1)
            - np.log(self.std).sum()
            - 0.5 * self.mean.size * np.log(2.0 * np.pi)
        )

    def box_mass(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Probability of [lo, hi] boxes; lo/hi are (..., N)."""
        a = (lo - self.mean) / (self.std * np.sqrt(2.0))
        b = (hi - self.mean) / (self.std * np.sqrt(2.0))
        return np.prod(0.5 * (erf(b) - erf(a)), axis=-1)


class UniformDensity:
    """Constant density (defaults to 1), for volumes and uniform draws."""

    def __init__(self, dim: int, value: float = 1.0):
        self.dim = dim
        self.value = float(value)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(points).shape[0], np.log(self.value))

    def box_mass(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        return self.value * np.prod(hi - lo, axis=-1)


class _CallableDensity:
    """Adapter for plain log-density callables of a single point."""

    def __init__(self, fn):
        self.fn = fn

    def log_density(self, points):
        pts = np.atleast_2d(points)
        return np.array([self.fn(p) for p in pts], dtype=float)


def _as_density(obj):
    if hasattr(obj, "log_density"):
        return obj
    if callable(obj):
        return _CallableDensity(obj)
    raise TypeError("density must expose log_density or be callable")


def _cell_masses(density, cl: np.ndarray, ch: np.ndarray) -> np.ndarray:
    """Integral of the density over each [cl, ch] cell.

    Exact through ``box_mass`` when the density provides it, otherwise a
    tensor Gauss-Legendre rule (smoothness inside the set is all that is
    needed; the discontinuity lives on boundary cells, which subdivision
    handles).
    """
    if hasattr(density, "box_mass"):
        return np.asarray(density.box_mass(cl, ch), dtype=float)
    n = cl.shape[1]
    order = 8 if n <= 3 else 4
    nodes, weights = _leggauss(order)
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    pts01 = np.stack([g.ravel() for g in grids], axis=1)  # (order^n, n)
    wgrid = np.meshgrid(*([weights] * n), indexing="ij")
    wprod = np.prod(np.stack([w.ravel() for w in wgrid], axis=1), axis=1)
    half = 0.5 * (ch - cl)
    mid = 0.5 * (ch + cl)
    out = np.empty(cl.shape[0])
    for i in range(cl.shape[0]):
        pts = mid[i] + pts01 * half[i]
        vals = np.exp(density.log_density(pts))
        out[i] = float(vals @ wprod) * np.prod(half[i])
    return out


# ----------------------------------------------------------------- hit-and-run


def hit_and_run_sample(
    density,
    zonotope: Zonotope,
    x0,
    rng: np.random.Generator,
    iterations: int | None = None,
) -> np.ndarray:
    """One sample of ``density`` restricted to the zonotope.

    Geometric random walk: each iteration picks a uniform direction,
    clips the chord through the set with two boundary_point calls, and
    draws from the 1-d restriction of the density along the chord by
    inverse-CDF on a 256-point grid. The walk runs N^3 iterations from
    ``x0`` (the set center in all in-package uses) before accepting.
    """
    density = _as_density(density)
    x = np.asarray(x0, dtype=float).copy()
    if not contains_point(zonotope, x, tol=1e-8):
        raise MaskError("hit-and-run start point is outside the set")
    n = zonotope.dim
    if iterations is None:
        iterations = n**3
    if zonotope.num_generators == 0:
        return zonotope.center.copy()
    for _ in range(iterations):
        for _ in range(32):
            u = rng.standard_normal(n)
            norm = np.linalg.norm(u)
            if norm < 1e-12:
                continue
            u /= norm
            _, a_plus = boundary_point(zonotope, x, u)
            _, a_minus = boundary_point(zonotope, x, -u)
            if a_plus + a_minus > 1e-12:
                break
        else:
            return x  # fully degenerate set around x
        ts = np.linspace(-a_minus, a_plus, CHORD_GRID)
        logf = density.log_density(x + ts[:, None] * u)
        w = np.exp(logf - logf.max())
        # Trapezoid CDF with linear-interpolated inverse.
        seg = 0.5 * (w[1:] + w[:-1])
        cdf = np.concatenate([[0.0], np.cumsum(seg)])
        total = cdf[-1]
        if total <= 0.0:
            continue
        target = rng.uniform(0.0, total)
        k = int(np.searchsorted(cdf, target, side="right") - 1)
        k = min(k, CHORD_GRID - 2)
        frac = (target - cdf[k]) / max(seg[k], 1e-300)
        t = ts[k] + frac * (ts[k + 1] - ts[k])
        x = x + t * u
    if not contains_point(zonotope, x, tol=1e-8):
        raise MaskError("hit-and-run iterate left the set")
    return x


# -------------------------------------------------------------------- cubature


def _batch_gauge(z: Zonotope, pts: np.ndarray) -> np.ndarray | None:
    """Vectorized gauge of points in the centered body; None if unsupported."""
    from .geometry import _facets_2d

    delta = pts - z.center
    if z.dim == 2:
        facets = _facets_2d(z)
        if facets is not None:
            normals, offsets = facets
            return np.abs(delta @ normals.T / offsets).max(axis=1)
    g = z.generators
    nz = np.abs(g) > 0
    if np.all(nz.sum(axis=0) <= 1):  # axis-aligned: the body is a box
        radius = np.abs(g).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.abs(delta) / radius
        ratios = np.where(
            radius > 0, ratios, np.where(np.abs(delta) <= 1e-12, 0.0, np.inf)
        )
        return ratios.max(axis=1)
    return None


def _batch_membership(z: Zonotope, pts: np.ndarray, tol: float) -> np.ndarray:
    gauge = _batch_gauge(z, pts)
    if gauge is not None:
        return gauge <= 1.0 + tol
    return np.array([contains_point(z, p, tol) for p in pts])


def _centered_facets(z: Zonotope):
    """(normals, offsets) with body == {|n'(x-c)| <= o}; None if unknown.

    Available for full-rank 2-d zonotopes (generator perpendiculars) and
    axis-aligned bodies (coordinate normals). Used by cubature for an
    exact outside test: a cell beyond one facet plane is disjoint.
    """
    from .geometry import _facets_2d

    if z.dim == 2:
        facets = _facets_2d(z)
        if facets is not None:
            return facets
    g = z.generators
    if np.all((np.abs(g) > 0).sum(axis=0) <= 1):
        return np.eye(z.dim), np.abs(g).sum(axis=1)
    return None


def cubature_integral(
    density,
    zonotope: Zonotope,
    tol: float = 1e-3,
    max_cells: int = 200_000,
) -> float:
    """Integral of the density over the zonotope by adaptive subdivision.

    The interval hull is split into cells; a cell with all corners inside
    the (convex) set is interior and contributes its exact box mass, a
    cell separated from the set along a coordinate axis or the radial
    direction is discarded, and the remaining boundary cells are refined
    until their total mass drops below ``tol`` of the running estimate.
    Boundary leftovers contribute mass weighted by their inside-corner
    fraction, so the final error is below the stopping threshold. Raises
    CubatureError with the best estimate when the cell cap is hit.
    """
    density = _as_density(density)
    n = zonotope.dim
    hull = zonotope.interval_hull()
    if zonotope.num_generators == 0 or np.all(hull.upper - hull.lower <= 0):
        return 0.0
    lo = hull.lower.reshape(1, n)
    hi = hull.upper.reshape(1, n)

    corner_signs = np.array(
        [[(k >> i) & 1 for i in range(n)] for k in range(2**n)], dtype=float
    )
    facets = _centered_facets(zonotope)

    def classify(cl, ch):
        m = cl.shape[0]
        corners = cl[:, None, :] + corner_signs[None, :, :] * (ch - cl)[:, None, :]
        inside = _batch_membership(
            zonotope, corners.reshape(-1, n), 1e-12
        ).reshape(m, 2**n)
        frac = inside.mean(axis=1)
        all_in = inside.all(axis=1)
        center_cell = 0.5 * (cl + ch)
        half = 0.5 * (ch - cl)
        if facets is not None:
            # Exact outside test: the whole cell beyond one facet plane.
            normals, offsets = facets
            proj = (center_cell - zonotope.center) @ normals.T
            spread = half @ np.abs(normals).T
            separated = np.any(np.abs(proj) - spread > offsets + 1e-12, axis=1)
        else:
            # Sufficient test: separation along the radial direction.
            d = center_cell - zonotope.center
            rho = np.abs(d @ zonotope.generators).sum(axis=1) + d @ zonotope.center
            min_cell = (d * center_cell).sum(axis=1) - (np.abs(d) * half).sum(axis=1)
            separated = min_cell > rho + 1e-12
        return all_in, separated & ~all_in, frac

    total_inside = 0.0
    frozen: list[tuple[np.ndarray, np.ndarray]] = []
    frozen_contrib = 0.0
    frozen_err = 0.0
    cells_lo, cells_hi = lo, hi
    for _level in range(200):
        all_in, separated, frac = classify(cells_lo, cells_hi)
        mass = _cell_masses(density, cells_lo, cells_hi)
        total_inside += float(mass[all_in].sum())
        keep = ~(all_in | separated)
        cells_lo, cells_hi = cells_lo[keep], cells_hi[keep]
        mass, frac = mass[keep], frac[keep]
        boundary_mass = float(mass.sum())
        estimate = total_inside + frozen_contrib + float((mass * frac).sum())
        err = frozen_err + boundary_mass
        if err <= tol * max(estimate, INTEGRAL_FLOOR):
            return max(estimate, 0.0)
        if cells_lo.shape[0] > max_cells:
            raise CubatureError(max(estimate, 0.0), err)
        # Park negligible boundary cells inside half the error budget so
        # refinement concentrates where the density actually lives; if the
        # running estimate later shrinks, thaw them and keep refining.
        budget = 0.5 * tol * max(estimate, INTEGRAL_FLOOR)
        if frozen and (frozen_err > budget or cells_lo.shape[0] == 0):
            cells_lo = np.vstack([cells_lo] + [f[0] for f in frozen])
            cells_hi = np.vstack([cells_hi] + [f[1] for f in frozen])
            frozen = []
            frozen_contrib = 0.0
            frozen_err = 0.0
        else:
            thr = budget / (8.0 * max(mass.size, 1))
            freeze = mass <= thr
            if np.any(freeze) and frozen_err + float(mass[freeze].sum()) <= budget:
                frozen.append((cells_lo[freeze], cells_hi[freeze]))
                frozen_contrib += float((mass[freeze] * frac[freeze]).sum())
                frozen_err += float(mass[freeze].sum())
                active = ~freeze
                cells_lo, cells_hi = cells_lo[active], cells_hi[active]
        if cells_lo.shape[0] == 0:
            continue
        if n == 2:
            # Quadrisect: both axes at once.
            l0, h0 = cells_lo, cells_hi
            m0 = 0.5 * (l0 + h0)
            cells_lo = np.vstack(
                [l0, np.stack([m0[:, 0], l0[:, 1]], 1),
                 np.stack([l0[:, 0], m0[:, 1]], 1), m0]
            )
            cells_hi = np.vstack(
                [m0, np.stack([h0[:, 0], m0[:, 1]], 1),
                 np.stack([m0[:, 0], h0[:, 1]], 1), h0]
            )
        else:
            widths = cells_hi - cells_lo
            axis = np.argmax(widths, axis=1)
            rows = np.arange(cells_lo.shape[0])
            mid = cells_lo.copy()
            mid[rows, axis] = 0.5 * (cells_lo[rows, axis] + cells_hi[rows, axis])
            left_hi = cells_hi.copy()
            left_hi[rows, axis] = mid[rows, axis]
            right_lo = cells_lo.copy()
            right_lo[rows, axis] = mid[rows, axis]
            cells_lo = np.vstack([cells_lo, right_lo])
            cells_hi = np.vstack([left_hi, cells_hi])
    raise CubatureError(max(total_inside + frozen_contrib, 0.0), np.inf)


# ------------------------------------------------------------------- ray mask


def _ray_distances(direction, ar: Zonotope, box: IntervalBox) -> tuple[float, float]:
    """Boundary distances of A^r and the action box from A^r's center.

    Both are measured along the same unnormalized direction, so the ratio
    is scale-free.
    """
    c = ar.center
    _, lam_ar = boundary_point(ar, c, direction)
    _, lam_box = boundary_point(box.as_zonotope(), c, direction)
    return lam_ar, lam_box


def ray_map(a, ar: Zonotope, box: IntervalBox) -> np.ndarray:
    """Radially map an action from the box onto the relevant set."""
    a = np.asarray(a, dtype=float)
    c = ar.center
    d = a - c
    if np.abs(d).max(initial=0.0) <= 1e-15:
        return c.copy()
    lam_ar, lam_box = _ray_distances(d, ar, box)
    if lam_box <= 0.0:
        raise MaskError("relevant set center sits on the action-box boundary")
    return c + (lam_ar / lam_box) * d


def ray_unmap(a_r, ar: Zonotope, box: IntervalBox) -> np.ndarray:
    """Inverse of ray_map (both points share one ray from the center)."""
    a_r = np.asarray(a_r, dtype=float)
    c = ar.center
    d = a_r - c
    if np.abs(d).max(initial=0.0) <= 1e-15:
        return c.copy()
    lam_ar, lam_box = _ray_distances(d, ar, box)
    if lam_ar <= 0.0:
        raise MaskError("relevant set is degenerate along the query ray")
    return c + (lam_box / lam_ar) * d


def _check_center_interior(ar: Zonotope, box: IntervalBox):
    c = ar.center
    if np.any(c <= box.lower) or np.any(c >= box.upper):
        raise MaskError(
            "relevant set center must lie strictly inside the action box"
        )


# -------------------------------------------------------------- generator mask


def _pushforward_cov(gen: np.ndarray, std: np.ndarray) -> np.ndarray:
    m = (gen * std**2) @ gen.T
    return m


def _chol_with_jitter(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(m + COV_JITTER * np.eye(m.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise MaskError("pushforward covariance singular after jitter") from exc


def generator_log_prob(a_r, mean, log_std, ar: Zonotope) -> float:
    """log N(a_r; G mu + c, G Sigma G') with jitter on singular covariance."""
    gen = ar.generators
    std = np.exp(log_std)
    m = _pushforward_cov(gen, std)
    chol = _chol_with_jitter(m)
    delta = np.asarray(a_r, dtype=float) - ar.center - gen @ np.asarray(mean)
    y = np.linalg.solve(chol, delta)
    return float(
        -0.5 * y @ y
        - np.log(np.diag(chol)).sum()
        - 0.5 * ar.dim * np.log(2.0 * np.pi)
    )


def generator_sample(mean, log_std, ar: Zonotope, rng) -> "MaskedSample":
    """Draw latent beta, clamp to the latent box, map through c + G beta.

    The log-probability and scores use the unclamped pushforward-normal
    formulas evaluated at the executed action; the clamp event is flagged
    so its frequency is observable in telemetry.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.exp(log_std)
    beta_raw = mean + std * rng.standard_normal(mean.size)
    beta = np.clip(beta_raw, -1.0, 1.0)
    executed = ar.center + ar.generators @ beta
    logp = generator_log_prob(executed, mean, log_std, ar)
    return MaskedSample(
        executed=executed,
        raw=beta_raw,
        log_prob=logp,
        set_=ar,
        clamped=bool(np.any(beta_raw != beta)),
    )


def generator_score(a_r, mean, log_std, ar: Zonotope):
    """Exact relevant-policy scores: d log pi^r / d mu and d / d Sigma.

    Returns (grad_mean (P,), grad_cov (P, P)); grad_cov treats the
    covariance entries as free parameters (the caller chains the diagonal
    into log-std space).
    """
    gen = ar.generators
    mean = np.asarray(mean, dtype=float)
    std = np.exp(log_std)
    m = _pushforward_cov(gen, std)
    chol = _chol_with_jitter(m)
    delta = np.asarray(a_r, dtype=float) - ar.center - gen @ mean
    minv_delta = np.linalg.solve(chol.T, np.linalg.solve(chol, delta))
    minv_g = np.linalg.solve(chol.T, np.linalg.solve(chol, gen))
    grad_mean = gen.T @ minv_delta
    gt_minv_delta = gen.T @ minv_delta
    grad_cov = -0.5 * (gen.T @ minv_g - np.outer(gt_minv_delta, gt_minv_delta))
    return grad_mean, grad_cov


# --------------------------------------------------------- distributional mask


def gaussian_polygon_mass(mean, std, zonotope: Zonotope) -> float | None:
    """Exact diagonal-Gaussian mass of a full-rank 2-d zonotope.

    Slab decomposition of the zonogon: between consecutive vertex
    abscissas the boundary is one linear edge above and one below, so the
    mass is the 1-d integral of pdf(x) * (cdf(y_top(x)) - cdf(y_bot(x))),
    evaluated per slab with a 24-point Gauss-Legendre rule (the integrand
    is analytic). Returns None when the decomposition does not apply
    (wrong dimension or a degenerate body).
    """
    if zonotope.dim != 2:
        return None
    verts = vertices_2d(zonotope)
    if len(verts) < 3:
        return None
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    edges = []
    m = len(verts)
    for i in range(m):
        a, b = verts[i], verts[(i + 1) % m]
        if a[0] > b[0]:
            a, b = b, a
        if b[0] - a[0] > 1e-14:
            edges.append((a[0], a[1], b[0], b[1]))
    xs = np.unique(np.round(verts[:, 0], 14))
    widths = np.diff(xs)
    live = widths > 1e-14
    xa = xs[:-1][live]
    widths = widths[live]
    mids = xa + 0.5 * widths
    lo_edges, hi_edges = [], []
    for xm in mids:
        covering = [e for e in edges if e[0] <= xm <= e[2]]
        if len(covering) < 2:
            return None  # unexpected geometry; caller falls back
        ys = sorted(
            covering,
            key=lambda e: e[1] + (e[3] - e[1]) * (xm - e[0]) / (e[2] - e[0]),
        )
        lo_edges.append(ys[0])
        hi_edges.append(ys[-1])
    nodes, weights = _leggauss(24)
    # One vectorized pass over all slab nodes: (slabs, nodes).
    x = mids[:, None] + 0.5 * widths[:, None] * nodes
    lo_e = np.array(lo_edges)
    hi_e = np.array(hi_edges)
    y_lo = lo_e[:, 1:2] + (lo_e[:, 3:4] - lo_e[:, 1:2]) * (x - lo_e[:, 0:1]) / (
        lo_e[:, 2:3] - lo_e[:, 0:1]
    )
    y_hi = hi_e[:, 1:2] + (hi_e[:, 3:4] - hi_e[:, 1:2]) * (x - hi_e[:, 0:1]) / (
        hi_e[:, 2:3] - hi_e[:, 0:1]
    )
    pdf_x = np.exp(-0.5 * ((x - mean[0]) / std[0]) ** 2) / (
        std[0] * np.sqrt(2.0 * np.pi)
    )
    scale = std[1] * np.sqrt(2.0)
    band = 0.5 * (erf((y_hi - mean[1]) / scale) - erf((y_lo - mean[1]) / scale))
    total = float(0.5 * widths @ ((pdf_x * band) @ weights))
    return max(total, 0.0)


def dist_log_prob_and_score(
    a_r, mean, log_std, ar: Zonotope, tol: float = 1e-3, integral: float | None = None
):
    """Truncated-density log-prob and its practical gradient.

    log pi^r = log pi(a_r) - log integral_{A^r} pi; the integral enters
    the value (and hence PPO ratios) but is treated as a constant in the
    gradient, which therefore is the base Gaussian score at a_r. The
    enclosed mass comes from cubature unless a precomputed ``integral``
    is supplied. Returns (log_prob, grad_mean, grad_log_std, underflow).
    """
    mean = np.asarray(mean, dtype=float)
    std = np.exp(log_std)
    if integral is None:
        integral = cubature_integral(DiagonalGaussianDensity(mean, std), ar, tol=tol)
    underflow = integral < INTEGRAL_FLOOR
    integral = max(integral, INTEGRAL_FLOOR)
    base = float(gaussian_log_prob(mean, log_std, a_r)[0])
    z = (np.asarray(a_r, dtype=float) - mean) / std
    grad_mean = z / std
    grad_log_std = z**2 - 1.0
    return base - float(np.log(integral)), grad_mean, grad_log_std, underflow


# ------------------------------------------------------------------ replacement


def replacement_filter(a, ar: Zonotope, rng) -> np.ndarray:
    """Pass a through if it is already relevant, else draw uniformly."""
    a = np.asarray(a, dtype=float)
    if contains_point(ar, a):
        return a
    return hit_and_run_sample(UniformDensity(ar.dim), ar, ar.center, rng)


# ------------------------------------------------------------------- the masks


@dataclass
class MaskedSample:
    executed: np.ndarray
    raw: np.ndarray
    log_prob: float
    set_: Zonotope | None = None
    integral: float | None = None
    clamped: bool = False
    underflow: bool = False


def _base_batch_log_prob(means, log_std, points):
    return gaussian_log_prob(means, log_std, points)

def _base_batch_score(means, log_std, points, weights):
    std = np.exp(log_std)
    z = (points - means) / std
    dmean = weights[:, None] * z / std
    dlogstd = (weights[:, None] * (z**2 - 1.0)).sum(axis=0)
    return dmean, dlogstd


class NoMask:
    """Plain Gaussian policy; executed actions are clipped to the box."""

    kind = "none"
    needs_set = False

    def policy_out_dim(self, action_dim: int, template) -> int:
        return action_dim

    def sample(self, mean, log_std, ar, box, rng) -> MaskedSample:
        a = mean + np.exp(log_std) * rng.standard_normal(mean.size)
        a = np.clip(a, box.lower, box.upper)
        logp = float(gaussian_log_prob(mean, log_std, a)[0])
        return MaskedSample(executed=a, raw=a, log_prob=logp)

    def batch_log_prob(self, means, log_std, samples):
        raw = np.stack([s.raw for s in samples])
        return _base_batch_log_prob(means, log_std, raw)

    def batch_score(self, means, log_std, samples, weights):
        raw = np.stack([s.raw for s in samples])
        return _base_batch_score(means, log_std, raw, weights)

    def deterministic(self, mean, ar, box, rng):
        return np.clip(mean, box.lower, box.upper)


class RayMask(NoMask):
    """Radial map of the clipped Gaussian sample onto A^r.

    The score and the stored log-probability are the base policy's at the
    pre-map action: the change-of-variables determinant is parameter-free
    and cancels from PPO ratios (log pi^r differs from it only by a
    parameter-independent constant, which is documented behavior).
    """

    kind = "ray"
    needs_set = True

    def sample(self, mean, log_std, ar, box, rng) -> MaskedSample:
        _check_center_interior(ar, box)
        a = mean + np.exp(log_std) * rng.standard_normal(mean.size)
        a = np.clip(a, box.lower, box.upper)
        executed = ray_map(a, ar, box)
        if not contains_point(ar, executed, EXEC_MEMBERSHIP_TOL):
            raise MaskError("ray-mapped action escaped the relevant set")
        logp = float(gaussian_log_prob(mean, log_std, a)[0])
        return MaskedSample(executed=executed, raw=a, log_prob=logp, set_=ar)

    def deterministic(self, mean, ar, box, rng):
        _check_center_interior(ar, box)
        return ray_map(np.clip(mean, box.lower, box.upper), ar, box)


class ReplacementMask(NoMask):
    """Environment-side baseline: replace out-of-set actions uniformly."""

    kind = "replacement"
    needs_set = True

    def sample(self, mean, log_std, ar, box, rng) -> MaskedSample:
        a = mean + np.exp(log_std) * rng.standard_normal(mean.size)
        a = np.clip(a, box.lower, box.upper)
        executed = replacement_filter(a, ar, rng)
        if not contains_point(ar, executed, EXEC_MEMBERSHIP_TOL):
            raise MaskError("replacement action escaped the relevant set")
        logp = float(gaussian_log_prob(mean, log_std, a)[0])
        return MaskedSample(executed=executed, raw=a, log_prob=logp, set_=ar)

    def deterministic(self, mean, ar, box, rng):
        return replacement_filter(np.clip(mean, box.lower, box.upper), ar, rng)


class GeneratorMask:
    """Latent-box policy mapped through the zonotope generators."""

    kind = "generator"
    needs_set = True

    def policy_out_dim(self, action_dim: int, template) -> int:
        return np.asarray(template).shape[1]

    def sample(self, mean, log_std, ar, box, rng) -> MaskedSample:
        sample = generator_sample(mean, log_std, ar, rng)
        if not contains_point(ar, sample.executed, EXEC_MEMBERSHIP_TOL):
            raise MaskError("generator action escaped the relevant set")
        return sample

    @staticmethod
    def _stacked_inverse_terms(means, log_std, samples):
        """Batched M^-1 delta and M^-1 G for M = G Sigma G' per sample.

        Falls back to the per-sample jittered path when the stacked
        Cholesky hits a singular covariance.
        """
        gens = np.stack([s.set_.generators for s in samples])  # (B, N, P)
        deltas = np.stack(
            [s.executed - s.set_.center for s in samples]
        ) - np.einsum("bnp,bp->bn", gens, means)
        sig = np.exp(2.0 * log_std)
        cov = np.einsum("bnp,p,bmp->bnm", gens, sig, gens)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            chol = np.linalg.cholesky(
                cov + COV_JITTER * np.eye(cov.shape[1])[None, :, :]
            )
        y = np.linalg.solve(chol, deltas[:, :, None])
        minv_delta = np.linalg.solve(
            np.transpose(chol, (0, 2, 1)), y
        )[:, :, 0]
        minv_g = np.linalg.solve(
            np.transpose(chol, (0, 2, 1)), np.linalg.solve(chol, gens)
        )
        logdet_half = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        quad = np.einsum("bn,bn->b", deltas, minv_delta)
        return gens, minv_delta, minv_g, logdet_half, quad

    @staticmethod
    def _uniform_shape(samples) -> bool:
        p = samples[0].set_.num_generators
        return all(s.set_.num_generators == p for s in samples)

    def batch_log_prob(self, means, log_std, samples):
        if not self._uniform_shape(samples):
            return np.array(
                [
                    generator_log_prob(s.executed, means[i], log_std, s.set_)
                    for i, s in enumerate(samples)
                ]
            )
        n = samples[0].set_.dim
        _, _, _, logdet_half, quad = self._stacked_inverse_terms(
            means, log_std, samples
        )
        return -0.5 * quad - logdet_half - 0.5 * n * np.log(2.0 * np.pi)

    def batch_score(self, means, log_std, samples, weights):
        if not self._uniform_shape(samples):
            dmean = np.zeros_like(means)
            dlogstd = np.zeros(log_std.size)
            sig_sq2 = 2.0 * np.exp(2.0 * log_std)
            for i, s in enumerate(samples):
                gm, gc = generator_score(s.executed, means[i], log_std, s.set_)
                dmean[i] = weights[i] * gm
                dlogstd += weights[i] * np.diag(gc) * sig_sq2
            return dmean, dlogstd
        gens, minv_delta, minv_g, _, _ = self._stacked_inverse_terms(
            means, log_std, samples
        )
        # Mean score G' M^-1 delta, covariance-diagonal score chained to
        # log-std space via dSigma_kk/drho_k = 2 sigma_k^2.
        gm = np.einsum("bnp,bn->bp", gens, minv_delta)
        diag_gmg = np.einsum("bnp,bnp->bp", gens, minv_g)
        dcov_diag = -0.5 * (diag_gmg - gm**2)
        sig_sq2 = 2.0 * np.exp(2.0 * log_std)
        dmean = weights[:, None] * gm
        dlogstd = (weights[:, None] * dcov_diag * sig_sq2).sum(axis=0)
        return dmean, dlogstd

    def deterministic(self, mean, ar, box, rng):
        return ar.center + ar.generators @ np.clip(mean, -1.0, 1.0)


class DistributionalMask:
    """Base density truncated to A^r and renormalized.

    ``integral_method`` selects how the enclosed mass is computed:
    "cubature" is the subdivision integrator; "exact2d" is the analytic
    Gaussian-zonogon mass; "auto" (default) prefers the analytic path and
    falls back to cubature. The two agree within the cubature tolerance
    (covered by tests); the analytic path is what makes the mask's PPO
    updates affordable, since every epoch re-evaluates one integral per
    minibatch sample.
    """

    kind = "distributional"
    needs_set = True

    def __init__(self, integral_tol: float = 1e-3, integral_method: str = "auto"):
        if integral_method not in ("auto", "cubature", "exact2d"):
            raise ValueError(f"unknown integral method {integral_method!r}")
        self.integral_tol = integral_tol
        self.integral_method = integral_method
        self.underflows = 0

    def policy_out_dim(self, action_dim: int, template) -> int:
        return action_dim

    def _mass(self, mean, std, ar: Zonotope) -> float:
        if self.integral_method in ("auto", "exact2d"):
            mass = gaussian_polygon_mass(mean, std, ar)
            if mass is not None:
                return mass
            if self.integral_method == "exact2d":
                raise MaskError("exact2d integral requires a full-rank 2-d set")
        return cubature_integral(
            DiagonalGaussianDensity(mean, std), ar, tol=self.integral_tol
        )

    def sample(self, mean, log_std, ar, box, rng) -> MaskedSample:
        density = DiagonalGaussianDensity(mean, np.exp(log_std))
        executed = hit_and_run_sample(density, ar, ar.center, rng)
        if not contains_point(ar, executed, EXEC_MEMBERSHIP_TOL):
            raise MaskError("hit-and-run action escaped the relevant set")
        integral = self._mass(mean, np.exp(log_std), ar)
        logp, _, _, underflow = dist_log_prob_and_score(
            executed, mean, log_std, ar, tol=self.integral_tol, integral=integral
        )
        self.underflows += int(underflow)
        return MaskedSample(
            executed=executed,
            raw=executed,
            log_prob=logp,
            set_=ar,
            integral=integral,
            underflow=underflow,
        )

    def batch_log_prob(self, means, log_std, samples):
        std = np.exp(log_std)
        out = np.empty(len(samples))
        for i, s in enumerate(samples):
            integral = self._mass(means[i], std, s.set_)
            out[i], _, _, _ = dist_log_prob_and_score(
                s.executed,
                means[i],
                log_std,
                s.set_,
                tol=self.integral_tol,
                integral=integral,
            )
        return out

    def batch_score(self, means, log_std, samples, weights):
        # The integral is a constant for the gradient: base score at a^r.
        pts = np.stack([s.executed for s in samples])
        return _base_batch_score(means, log_std, pts, weights)

    def deterministic(self, mean, ar, box, rng):
        if contains_point(ar, mean):
            return np.asarray(mean, dtype=float)
        d = np.asarray(mean, dtype=float) - ar.center
        if np.abs(d).max(initial=0.0) <= 1e-15:
            return ar.center.copy()
        point, _ = boundary_point(ar, ar.center, d)
        return point


def make_mask(kind: str, **kwargs):
    table = {
        "none": NoMask,
        "ray": RayMask,
        "generator": GeneratorMask,
        "distributional": DistributionalMask,
        "replacement": ReplacementMask,
    }
    if kind not in table:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    return table[kind](**kwargs)
