"""Containment certificates and the geometric-mean scaling program.

Zonotope-in-zonotope containment is certified by matrices (Gamma, beta)
with  G_in = G_out Gamma,  c_out - c_in = G_out beta  and row sums of
|[Gamma, beta]| at most one. The condition is sufficient, not necessary:
"not certified" never proves non-containment.

The scaling program maximizes the geometric mean of the generator
scalings of a template zonotope subject to linear constraints. Since log
is monotone, it is solved as  max sum_i log p_i  with a log-barrier
Newton method on the linear inequalities; the barrier path makes the
objective non-decreasing across outer iterations, and the final duality
gap is driven below 1e-9 so downstream certificates re-verify tightly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Zonotope
from .lp import LinearProgram, LPStatus, solve_lp

__all__ = [
    "ContainmentCertificate",
    "zonotope_containment",
    "ScalingProgram",
    "ScalingSolution",
    "InfeasibleProgramError",
    "SolverConvergenceError",
    "solve_geometric_mean",
]

CERT_TOL = 1e-8


class InfeasibleProgramError(RuntimeError):
    """The scaling program has no strictly feasible point."""


class SolverConvergenceError(RuntimeError):
    """Newton iterations exhausted; carries the final KKT residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class ContainmentCertificate:
    certified: bool
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    norm: float | None = None  # max row sum of |[gamma, beta]|

    def residuals(self, inner: Zonotope, outer: Zonotope) -> dict:
        """Re-substitute the certificate into its three defining conditions."""
        if not self.certified:
            raise ValueError("no certificate to verify")
        gen_res = np.abs(
            inner.generators - outer.generators @ self.gamma
        ).max(initial=0.0)
        cen_res = np.abs(
            (outer.center - inner.center) - outer.generators @ self.beta
        ).max(initial=0.0)
        rows = np.abs(self.gamma).sum(axis=1) + np.abs(self.beta)
        return {
            "generator": float(gen_res),
            "center": float(cen_res),
            "norm": float(rows.max(initial=0.0)),
        }


def zonotope_containment(inner: Zonotope, outer: Zonotope) -> ContainmentCertificate:
    """Search for a containment certificate of ``inner`` inside ``outer``.

    Minimizes the certificate norm by LP and certifies when it is <= 1
    within tolerance. LP breakdown raises; an honest "not certified"
    returns ``certified=False``.
    """
    if inner.dim != outer.dim:
        raise ValueError("containment requires equal dimensions")
    n = inner.dim
    p_in, p_out = inner.num_generators, outer.num_generators
    if p_out == 0:
        # Outer is a point: containment iff inner is the same point.
        same = p_in == 0 and np.allclose(inner.center, outer.center, atol=CERT_TOL)
        if same:
            return ContainmentCertificate(True, np.zeros((0, 0)), np.zeros(0), 0.0)
        return ContainmentCertificate(False)

    # Variables: [vec(Gamma) (p_out*p_in), beta (p_out),
    #             U (p_out*p_in), u (p_out), t].
    ng = p_out * p_in
    n_var = 2 * ng + 2 * p_out + 1
    i_gam, i_beta, i_u_g, i_u_b, i_t = (
        0,
        ng,
        ng + p_out,
        2 * ng + p_out,
        n_var - 1,
    )

    rows_eq = []
    rhs_eq = []
    # G_in = G_out Gamma, column by column; Gamma stored column-major so
    # column j of Gamma occupies i_gam + j*p_out : i_gam + (j+1)*p_out.
    for j in range(p_in):
        block = np.zeros((n, n_var))
        block[:, i_gam + j * p_out : i_gam + (j + 1) * p_out] = outer.generators
        rows_eq.append(block)
        rhs_eq.append(inner.generators[:, j])
    block = np.zeros((n, n_var))
    block[:, i_beta : i_beta + p_out] = outer.generators
    rows_eq.append(block)
    rhs_eq.append(outer.center - inner.center)
    a_eq = np.vstack(rows_eq)
    b_eq = np.concatenate(rhs_eq)

    rows_in = []
    rhs_in = []
    # +-Gamma <= U and +-beta <= u.
    for base, ubase, count in ((i_gam, i_u_g, ng), (i_beta, i_u_b, p_out)):
        for sgn in (1.0, -1.0):
            block = np.zeros((count, n_var))
            block[:, base : base + count] = sgn * np.eye(count)
            block[:, ubase : ubase + count] -= np.eye(count)
            rows_in.append(block)
            rhs_in.append(np.zeros(count))
    # Row sums of U plus u at most t.
    block = np.zeros((p_out, n_var))
    for j in range(p_in):
        block[:, i_u_g + j * p_out : i_u_g + (j + 1) * p_out] += np.eye(p_out)
    block[:, i_u_b : i_u_b + p_out] += np.eye(p_out)
    block[:, i_t] = -1.0
    rows_in.append(block)
    rhs_in.append(np.zeros(p_out))
    a_in = np.vstack(rows_in)
    b_in = np.concatenate(rhs_in)

    obj = np.zeros(n_var)
    obj[i_t] = 1.0
    res = solve_lp(LinearProgram(obj, a_eq=a_eq, b_eq=b_eq, a_in=a_in, b_in=b_in))
    if res.status is LPStatus.INFEASIBLE:
        return ContainmentCertificate(False)
    if not res.is_optimal:
        raise RuntimeError(f"containment LP ended with status {res.status}")
    t_star = float(res.x[i_t])
    if t_star > 1.0 + CERT_TOL:
        return ContainmentCertificate(False, norm=t_star)
    gamma = res.x[i_gam : i_gam + ng].reshape(p_in, p_out).T
    beta = res.x[i_beta : i_beta + p_out]
    return ContainmentCertificate(True, gamma, beta, t_star)


@dataclass
class ScalingProgram:
    """max geometric mean of scalings p over linear constraints.

    Decision vector layout is [center (if free), p (one per template
    column), aux]; ``a_in x <= b_in`` and optional ``a_eq x = b_eq`` are
    expressed over that full vector. The positivity floor on p is
    appended automatically when the solver runs.
    """

    template: np.ndarray
    free_center: bool = True
    n_aux: int = 0
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    center: np.ndarray | None = None  # required when the center is fixed
    floor: float = 1e-6

    def __post_init__(self):
        self.template = np.atleast_2d(np.asarray(self.template, dtype=float))
        n, p = self.template.shape
        if p < n or np.linalg.matrix_rank(self.template) < n:
            raise ValueError("template must have full row rank and P >= N")
        if not self.free_center:
            if self.center is None:
                raise ValueError("fixed-center program needs a center")
            self.center = np.asarray(self.center, dtype=float)
        if self.floor <= 0:
            raise ValueError("floor must be positive")

    @property
    def dim(self) -> int:
        return self.template.shape[0]

    @property
    def n_scalings(self) -> int:
        return self.template.shape[1]

    @property
    def n_center(self) -> int:
        return self.dim if self.free_center else 0

    @property
    def n_vars(self) -> int:
        return self.n_center + self.n_scalings + self.n_aux

    def scaling_slice(self) -> slice:
        return slice(self.n_center, self.n_center + self.n_scalings)

    def zonotope_at(self, x: np.ndarray) -> Zonotope:
        p = x[self.scaling_slice()]
        c = x[: self.n_center] if self.free_center else self.center
        return Zonotope(c, self.template * p)

    def to_json_dict(self) -> dict:
        """Diagnostic dump for bug reports; schema: plain nested lists."""

        def enc(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "template": enc(self.template),
            "free_center": self.free_center,
            "n_aux": self.n_aux,
            "a_in": enc(self.a_in),
            "b_in": enc(self.b_in),
            "a_eq": enc(self.a_eq),
            "b_eq": enc(self.b_eq),
            "center": enc(self.center),
            "floor": self.floor,
        }


@dataclass
class ScalingSolution:
    scalings: np.ndarray
    center: np.ndarray
    aux: np.ndarray
    x: np.ndarray
    objective: float  # sum of log scalings
    kkt_residual: float
    newton_iterations: int
    barrier_objectives: list[float] = field(default_factory=list)

    @property
    def geometric_mean(self) -> float:
        return float(np.exp(self.objective / self.scalings.size))


def _strictly_feasible_start(
    a_in: np.ndarray, b_in: np.ndarray, a_eq, b_eq, n_vars: int
) -> np.ndarray:
    """Phase-1 LP: maximize the uniform slack margin; infeasible if <= 0."""
    obj = np.zeros(n_vars + 1)
    obj[-1] = -1.0
    a1 = np.hstack([a_in, np.ones((a_in.shape[0], 1))])
    bounds = [(None, None)] * n_vars + [(None, 1.0)]
    eq = None
    beq = None
    if a_eq is not None and a_eq.shape[0]:
        eq = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
        beq = b_eq
    res = solve_lp(
        LinearProgram(obj, a_eq=eq, b_eq=beq, a_in=a1, b_in=b_in, bounds=bounds)
    )
    if res.status is LPStatus.INFEASIBLE or not res.is_optimal:
        raise InfeasibleProgramError("no feasible point for the scaling program")
    margin = float(res.x[-1])
    if margin <= 1e-9:
        raise InfeasibleProgramError(
            f"no strictly feasible point (best margin {margin:.2e})"
        )
    return res.x[:-1]


def solve_geometric_mean(
    program: ScalingProgram,
    x0: np.ndarray | None = None,
    gap_tol: float = 1e-9,
    max_newton: int = 400,
    warm_t0: float = 1e5,
) -> ScalingSolution:
    """Barrier-Newton maximization of sum(log p) over the program.

    ``x0`` may supply a warm start; it is used only if strictly feasible,
    in which case the barrier ladder starts at ``warm_t0`` instead of 1
    (Newton is globally convergent from any interior point, so this only
    trades iterations, never correctness). Raises InfeasibleProgramError
    (typed) when no interior exists and SolverConvergenceError with the
    final residual when Newton stalls.
    """
    n = program.n_vars
    sl = program.scaling_slice()
    np_s = program.n_scalings

    # Assemble inequalities, appending the positivity floor on p.
    floor_rows = np.zeros((np_s, n))
    floor_rows[np.arange(np_s), np.arange(sl.start, sl.stop)] = -1.0
    if program.a_in is not None and program.a_in.shape[0]:
        a_in = np.vstack([np.asarray(program.a_in, dtype=float), floor_rows])
        b_in = np.concatenate(
            [np.asarray(program.b_in, dtype=float), -program.floor * np.ones(np_s)]
        )
    else:
        a_in = floor_rows
        b_in = -program.floor * np.ones(np_s)
    a_eq = None if program.a_eq is None else np.asarray(program.a_eq, dtype=float)
    b_eq = None if program.b_eq is None else np.asarray(program.b_eq, dtype=float)
    m_in = a_in.shape[0]
    m_eq = 0 if a_eq is None else a_eq.shape[0]

    def slacks(x):
        return b_in - a_in @ x

    x = None
    t = 1.0
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape == (n,):
            ok = slacks(x0).min() > 1e-12
            if ok and m_eq:
                ok = np.abs(a_eq @ x0 - b_eq).max() < 1e-9
            if ok:
                x = x0.copy()
                t = warm_t0
    if x is None:
        x = _strictly_feasible_start(a_in, b_in, a_eq, b_eq, n)
        if m_eq:
            # Project exactly onto the equality manifold (phase 1 satisfies
            # it within LP tolerance already).
            corr, *_ = np.linalg.lstsq(a_eq, a_eq @ x - b_eq, rcond=None)
            x = x - corr
            if slacks(x).min() <= 0:
                raise InfeasibleProgramError(
                    "interior lost while projecting onto equalities"
                )

    idx_p = np.arange(sl.start, sl.stop)
    barrier_objectives: list[float] = []
    newton_total = 0
    mu = 50.0
    kkt_residual = np.inf
    nu = np.zeros(m_eq)

    while True:
        # Work with f_t / t so late stages (huge t) keep full float precision.
        inv_t = 1.0 / t
        for _ in range(60):
            if newton_total >= max_newton:
                raise SolverConvergenceError(
                    "geometric-mean solver exceeded Newton budget", kkt_residual
                )
            newton_total += 1
            s = slacks(x)
            p = x[idx_p]
            inv_s = 1.0 / s
            grad = inv_t * (a_in.T @ inv_s)
            grad[idx_p] -= 1.0 / p
            hess = inv_t * ((a_in * inv_s[:, None] ** 2).T @ a_in)
            hess[idx_p, idx_p] += 1.0 / p**2
            if m_eq:
                kkt = np.zeros((n + m_eq, n + m_eq))
                kkt[:n, :n] = hess
                kkt[:n, n:] = a_eq.T
                kkt[n:, :n] = a_eq
                rhs = np.concatenate([-grad, np.zeros(m_eq)])
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
                dx, nu = sol[:n], sol[n:]
            else:
                try:
                    dx = np.linalg.solve(hess, -grad)
                except np.linalg.LinAlgError:
                    dx = np.linalg.lstsq(hess, -grad, rcond=None)[0]
            decrement = -0.5 * grad @ dx
            if decrement <= 1e-16 * max(1.0, np.abs(np.log(p).sum())):
                break
            # Longest step keeping strict feasibility, then backtrack.
            a_dx = a_in @ dx
            bad = a_dx > 0
            step = 1.0
            if np.any(bad):
                step = min(1.0, 0.99 * float((s[bad] / a_dx[bad]).min()))
            f_cur = -np.log(p).sum() - inv_t * np.log(s).sum()
            g_dot = grad @ dx
            for _ in range(50):
                x_new = x + step * dx
                s_new = slacks(x_new)
                p_new = x_new[idx_p]
                if s_new.min() > 0 and p_new.min() > 0:
                    f_new = -np.log(p_new).sum() - inv_t * np.log(s_new).sum()
                    if f_new <= f_cur + 1e-4 * step * g_dot:
                        break
                step *= 0.5
            else:
                break
            x = x_new
        barrier_objectives.append(float(np.log(x[idx_p]).sum()))
        if m_in / t < gap_tol:
            break
        t *= mu

    if gap_tol <= 1e-8:
        # Tight solves certify the final point by refitting multipliers on
        # the active set by least squares (the raw barrier multipliers
        # 1/(t s) lose precision once active slacks reach cancellation
        # level). The residual is scaled by the objective-gradient
        # magnitude: scalings pinned at the floor make the raw gradient
        # O(1/floor), where an absolute bar says nothing.
        lam_barrier = 1.0 / (t * slacks(x))
        grad0 = np.zeros(n)
        grad0[idx_p] = -1.0 / x[idx_p]
        grad_scale = max(1.0, float(np.abs(grad0).max()))
        active = np.nonzero(
            lam_barrier > 1e-8 * max(lam_barrier.max(), 1e-300)
        )[0]
        cols = [a_in[active].T] if active.size else []
        if m_eq:
            cols.append(a_eq.T)
        if cols:
            mmat = np.hstack(cols)
            mult, *_ = np.linalg.lstsq(mmat, -grad0, rcond=None)
            mult[: active.size] = np.maximum(mult[: active.size], 0.0)
            kkt_residual = float(np.abs(grad0 + mmat @ mult).max()) / grad_scale
        else:
            kkt_residual = float(np.abs(grad0).max()) / grad_scale
        if kkt_residual > 1e-6:
            raise SolverConvergenceError(
                "geometric-mean solver did not meet the KKT tolerance",
                kkt_residual,
            )
    else:
        # Loose solves stop the ladder early; at moderate t the active set
        # is not crisp enough for the multiplier refit, so the duality-gap
        # bound m/t is the honest optimality certificate.
        kkt_residual = m_in / t
    p = x[idx_p].copy()
    center = (
        x[: program.n_center].copy() if program.free_center else program.center.copy()
    )
    aux = x[sl.stop :].copy()
    return ScalingSolution(
        scalings=p,
        center=center,
        aux=aux,
        x=x.copy(),
        objective=float(np.log(p).sum()),
        kkt_residual=kkt_residual,
        newton_iterations=newton_total,
        barrier_objectives=barrier_objectives,
    )
