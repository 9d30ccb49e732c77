"""State-dependent relevant action sets.

Three constructions, all returning zonotopes inside the action box:

* ``seeker_relevant_set`` encodes the three geometric constraints of the
  reach-avoid task (stay in the action box, keep the next position inside
  the arena, stay out of the half-space tangent to the obstacle) directly
  through support functions, so the scaling program has only the center
  and the template scalings as variables.
* ``template_relevant_set`` handles general discrete-time linearizations:
  the one-step reachable set  <A_d s + B_d c + c_W', [B_d G diag(p), G_W']>
  must be contained in the relevant state set and the action zonotope in
  the action box, both via containment multipliers. When the enclosing
  generator matrices are invertible the multipliers are eliminated
  analytically (p > 0 fixes their signs), which keeps the program tiny.
* ``static_norm_ball_set`` builds the fixed power-constraint ball
  under-approximation.

Infeasibility never crashes a rollout: providers fall back to the
previous certified set or a max-slack point action and flag the episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environments import (
    dynamics_jacobians,
    env_action_space,
    env_template,
    quad_derivative,
)
from .geometry import (
    GeometryError,
    IntervalBox,
    Zonotope,
    ball_underapprox,
    linear_map,
    minkowski_sum,
)
from .lp import LinearProgram, solve_lp
from .programs import (
    InfeasibleProgramError,
    ScalingProgram,
    SolverConvergenceError,
    solve_geometric_mean,
    zonotope_containment,
)

__all__ = [
    "LinearizedStep",
    "RelevantSetRequest",
    "RelevantSetResult",
    "RelevantSetError",
    "linearize_step",
    "seeker_relevant_set",
    "template_relevant_set",
    "static_norm_ball_set",
    "default_relevant_state_set",
    "SeekerSetProvider",
    "TemplateSetProvider",
    "StaticSetProvider",
    "FullActionSetProvider",
    "make_provider",
]

SAFETY_MARGIN = 1e-7  # shaves the state constraints so float roundoff
# in the solver can never push an executed action past a hard boundary


class RelevantSetError(RuntimeError):
    """Unrecoverable relevant-set failure (after all fallbacks)."""


@dataclass
class LinearizedStep:
    """One-step discretization s' = A_d s + B_d a + W'.

    ``w_prime`` carries the discretized disturbance set, the affine drift
    of the linearization (gravity and the expansion anchor live in its
    center), and the curvature inflation.
    """

    a_d: np.ndarray
    b_d: np.ndarray
    w_prime: Zonotope
    dt: float


@dataclass
class RelevantSetRequest:
    state: np.ndarray
    action_space: IntervalBox
    template: np.ndarray
    env: str
    dt: float = 1.0
    state_bounds: IntervalBox | None = None
    relevant_state_set: Zonotope | None = None
    obstacle_center: np.ndarray | None = None
    obstacle_radius: float = 0.0


@dataclass
class RelevantSetResult:
    zonotope: Zonotope
    feasible: bool
    fallback: bool = False
    solver_x: np.ndarray | None = None  # warm-start vector for the next call
    scalings: np.ndarray | None = None
    certificate_norm: float | None = None


def _expm_and_integral(j: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """exp(J dt) and int_0^dt exp(J tau) dtau by truncated series.

    Uses the augmented-block trick: exp([[J, I], [0, 0]] dt) stacks both
    results, evaluated with scaling-and-squaring and a series of order 16.
    """
    n = j.shape[0]
    m = np.zeros((2 * n, 2 * n))
    m[:n, :n] = j
    m[:n, n:] = np.eye(n)
    m *= dt
    norm = np.abs(m).sum(axis=1).max(initial=0.0)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5))) if norm > 0.5 else 0)
    ms = m / (2.0**squarings)
    result = np.eye(2 * n)
    term = np.eye(2 * n)
    for k in range(1, 17):
        term = term @ ms / k
        result += term
    for _ in range(squarings):
        result = result @ result
    return result[:n, :n], result[:n, n:]


def linearize_step(
    model: str,
    s: np.ndarray,
    dt: float,
    disturbance: Zonotope | None = None,
    eps_lin: float = 1e-3,
) -> LinearizedStep:
    """Discretize the dynamics around (s, action-box center, w=0).

    The affine drift f(s, a_mid, 0) - J_s s - J_a a_mid is propagated into
    the center of ``w_prime``; the generator part collects the discretized
    disturbance plus an eps_lin * I curvature inflation.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(s, dtype=float)
    box = env_action_space(model)
    a_mid = box.center
    j_s, j_a, e = dynamics_jacobians(model, s, a_mid)
    n = j_s.shape[0]
    a_d, phi1 = _expm_and_integral(j_s, dt)
    b_d = phi1 @ j_a
    drift = quad_derivative(model, s, a_mid, None) - j_s @ s - j_a @ a_mid
    w_center = phi1 @ drift
    parts = [Zonotope(w_center)]
    if disturbance is not None and e is not None:
        parts.append(linear_map(phi1 @ e, disturbance))
    if eps_lin > 0:
        parts.append(Zonotope(np.zeros(n), eps_lin * np.eye(n)))
    w_prime = parts[0]
    for extra in parts[1:]:
        w_prime = minkowski_sum(w_prime, extra)
    return LinearizedStep(a_d=a_d, b_d=b_d, w_prime=w_prime, dt=dt)


def _strict_slack(program: ScalingProgram, x: np.ndarray) -> float:
    rows = [] if program.a_in is None else [program.b_in - program.a_in @ x]
    rows.append(x[program.scaling_slice()] - program.floor)
    return float(np.concatenate(rows).min())


def _solve_with_candidates(program, candidates, gap_tol):
    """Try (warm start, barrier start) pairs in order, then phase 1.

    Warm candidates must sit clearly inside the feasible region (a
    boundary point wrecks the barrier Hessian); a stalled attempt falls
    through to the next candidate instead of failing the call.
    """
    last_error = None
    for cand, t0 in candidates:
        if cand is None or cand.shape != (program.n_vars,):
            continue
        if _strict_slack(program, cand) > 1e-9:
            try:
                return solve_geometric_mean(
                    program, x0=cand, gap_tol=gap_tol, warm_t0=t0
                )
            except SolverConvergenceError as exc:
                last_error = exc
    try:
        return solve_geometric_mean(program, gap_tol=gap_tol)
    except SolverConvergenceError:
        if last_error is not None:
            raise last_error
        raise


# ----------------------------------------------------------------------- seeker


def seeker_relevant_set(
    req: RelevantSetRequest,
    x0: np.ndarray | None = None,
    gap_tol: float = 1e-9,
) -> RelevantSetResult:
    """Largest (geometric-mean) template set of collision-free actions.

    Variables are [center (2), scalings (P)]. Constraints, all linear:
      support of A^r within the action box,
      support of s + dt*A^r within the arena bounds,
      support of s + dt*A^r within the half-space tangent to the obstacle
      (normal pointing from the agent toward the obstacle center).
    Infeasible geometry degrades to a max-slack point action, flagged as
    a fallback.
    """
    s = np.asarray(req.state, dtype=float)
    box = req.action_space
    bounds = req.state_bounds
    gt = np.asarray(req.template, dtype=float)
    n, p = gt.shape
    abs_gt = np.abs(gt)
    dt = req.dt
    if bounds is None:
        raise ValueError("seeker program needs state bounds")
    if np.any(s <= bounds.lower) or np.any(s >= bounds.upper):
        raise GeometryError("agent position must be strictly inside the bounds")

    rows, rhs = [], []
    # Action box: +-c_k + sum_i |G_ki| p_i <= box bounds.
    for k in range(n):
        row = np.zeros(n + p)
        row[k] = 1.0
        row[n:] = abs_gt[k]
        rows.append(row.copy())
        rhs.append(box.upper[k])
        row[k] = -1.0
        rows.append(row)
        rhs.append(-box.lower[k])
    # Arena: +-(s_k + dt c_k) + dt sum_i |G_ki| p_i <= state bounds - margin.
    for k in range(n):
        row = np.zeros(n + p)
        row[k] = dt
        row[n:] = dt * abs_gt[k]
        rows.append(row.copy())
        rhs.append(bounds.upper[k] - s[k] - SAFETY_MARGIN)
        row[k] = -dt
        rows.append(row)
        rhs.append(s[k] - bounds.lower[k] - SAFETY_MARGIN)
    # Obstacle half-space, tangent at the line from agent to center.
    if req.obstacle_center is not None:
        o = np.asarray(req.obstacle_center, dtype=float)
        gap = np.linalg.norm(o - s)
        if gap <= req.obstacle_radius:
            raise GeometryError("agent position must be strictly outside the obstacle")
        normal = (o - s) / gap
        offset = float(normal @ o) - req.obstacle_radius
        row = np.zeros(n + p)
        row[:n] = dt * normal
        row[n:] = dt * np.abs(normal @ gt)
        rows.append(row)
        rhs.append(offset - float(normal @ s) - SAFETY_MARGIN)

    program = ScalingProgram(
        gt,
        free_center=True,
        a_in=np.array(rows),
        b_in=np.array(rhs),
    )

    # Candidate ladder: the previous optimum pulled into the interior
    # (two shrink levels; the raw optimum sits on its active boundary and
    # is useless as a barrier start), then the tiny centered set.
    analytic = np.zeros(n + p)
    analytic[:n] = box.center
    analytic[n:] = 2.0 * program.floor
    candidates = []
    if x0 is not None and x0.shape == (n + p,):
        for c_shrink, p_shrink, t0 in ((0.95, 0.9, 1e3), (0.8, 0.6, 1e2)):
            cand = np.empty(n + p)
            cand[:n] = box.center + c_shrink * (x0[:n] - box.center)
            cand[n:] = np.maximum(p_shrink * x0[n:], 2.0 * program.floor)
            candidates.append((cand, t0))
    candidates.append((analytic, 10.0))
    try:
        sol = _solve_with_candidates(program, candidates, gap_tol)
    except InfeasibleProgramError:
        return _seeker_fallback(s, box, bounds, req)
    return RelevantSetResult(
        zonotope=program.zonotope_at(sol.x),
        feasible=True,
        solver_x=sol.x,
        scalings=sol.scalings,
    )


def _seeker_fallback(s, box, bounds, req) -> RelevantSetResult:
    """Max-slack point action: a tiny LP over [a, slack]."""
    n = s.size
    rows, rhs = [], []
    for k in range(n):
        row = np.zeros(n + 1)
        row[k], row[-1] = req.dt, 1.0
        rows.append(row.copy())
        rhs.append(bounds.upper[k] - s[k])
        row[k] = -req.dt
        rows.append(row)
        rhs.append(s[k] - bounds.lower[k])
    if req.obstacle_center is not None:
        o = np.asarray(req.obstacle_center, dtype=float)
        normal = (o - s) / np.linalg.norm(o - s)
        row = np.zeros(n + 1)
        row[:n], row[-1] = req.dt * normal, 1.0
        rows.append(row)
        rhs.append(float(normal @ o) - req.obstacle_radius - float(normal @ s))
    obj = np.zeros(n + 1)
    obj[-1] = -1.0
    bnds = [(float(lo), float(hi)) for lo, hi in zip(box.lower, box.upper)]
    bnds.append((0.0, 1.0))
    res = solve_lp(
        LinearProgram(obj, a_in=np.array(rows), b_in=np.array(rhs), bounds=bnds)
    )
    if not res.is_optimal:
        raise RelevantSetError(
            f"seeker fallback LP failed at state {s.tolist()} ({res.status})"
        )
    return RelevantSetResult(
        zonotope=Zonotope(res.x[:n]), feasible=False, fallback=True
    )


# --------------------------------------------------------------- template path


def _template_program_eliminated(req, lin, inv_sr, inv_a):
    """Scaling program with containment multipliers eliminated.

    With invertible enclosing generator matrices the multipliers are
    Gamma = G_out^-1 G_in; since p > 0, |Gamma| on the p-dependent block is
    |G_out^-1 B_d G~|_kj * p_j, exactly linear. Only the center-matching
    beta terms need auxiliary absolute-value variables.
    """
    s = np.asarray(req.state, dtype=float)
    gt = req.template
    n_a, p = gt.shape
    sr = req.relevant_state_set
    n_s = sr.dim
    box = req.action_space
    g_a_c = box.center

    m_reach = np.abs(inv_sr @ (lin.b_d @ gt))  # n_s x p, per-unit-p block
    k_const = np.abs(inv_sr @ lin.w_prime.generators).sum(axis=1)  # n_s
    beta0 = inv_sr @ (sr.center - lin.a_d @ s - lin.w_prime.center)
    beta_c = -inv_sr @ lin.b_d  # beta^R = beta0 + beta_c @ c
    m_act = np.abs(inv_a @ gt)  # n_a x p
    alpha0 = inv_a @ g_a_c
    alpha_c = -inv_a  # beta^A = alpha0 + alpha_c @ c

    # Variables [c (n_a), p (p), uR (n_s), uA (n_a)].
    nv = n_a + p + n_s + n_a
    i_p, i_ur, i_ua = n_a, n_a + p, n_a + p + n_s
    rows, rhs = [], []
    # Reach row sums: sum_j m_reach[k,j] p_j + uR_k <= 1 - k_const[k] - margin.
    block = np.zeros((n_s, nv))
    block[:, i_p : i_p + p] = m_reach
    block[np.arange(n_s), i_ur + np.arange(n_s)] = 1.0
    rows.append(block)
    rhs.append(1.0 - k_const - SAFETY_MARGIN)
    # +-(beta0 + beta_c c) <= uR.
    for sgn in (1.0, -1.0):
        block = np.zeros((n_s, nv))
        block[:, :n_a] = sgn * beta_c
        block[np.arange(n_s), i_ur + np.arange(n_s)] = -1.0
        rows.append(block)
        rhs.append(-sgn * beta0)
    # Action row sums: sum_j m_act[k,j] p_j + uA_k <= 1.
    block = np.zeros((n_a, nv))
    block[:, i_p : i_p + p] = m_act
    block[np.arange(n_a), i_ua + np.arange(n_a)] = 1.0
    rows.append(block)
    rhs.append(np.ones(n_a))
    # +-(alpha0 + alpha_c c) <= uA.
    for sgn in (1.0, -1.0):
        block = np.zeros((n_a, nv))
        block[:, :n_a] = sgn * alpha_c
        block[np.arange(n_a), i_ua + np.arange(n_a)] = -1.0
        rows.append(block)
        rhs.append(-sgn * alpha0)

    program = ScalingProgram(
        gt,
        free_center=True,
        n_aux=n_s + n_a,
        a_in=np.vstack(rows),
        b_in=np.concatenate(rhs),
    )
    # Analytic interior candidate: tiny centered set at the action center.
    x0 = np.zeros(nv)
    x0[:n_a] = g_a_c
    x0[i_p : i_p + p] = 2.0 * program.floor
    beta_r = beta0 + beta_c @ g_a_c
    x0[i_ur : i_ur + n_s] = np.abs(beta_r) + 1e-9
    x0[i_ua:] = 1e-9
    return program, x0


def _template_program_general(req, lin):
    """Full program with explicit containment multipliers as variables."""
    s = np.asarray(req.state, dtype=float)
    gt = req.template
    n_a, p = gt.shape
    sr = req.relevant_state_set
    n_s, p_sr = sr.dim, sr.num_generators
    box = req.action_space
    g_a = np.diag(box.half_width)
    p_a = n_a
    g_w = lin.w_prime.generators
    p_w = g_w.shape[1]
    p_r = p + p_w  # reach-set generator count (state is a point)

    # Variables: [c, p, GammaR (p_sr*p_r), betaR (p_sr), UR, uR,
    #             GammaA (p_a*p), betaA (p_a), UA, uA]
    sizes = [
        n_a,
        p,
        p_sr * p_r,
        p_sr,
        p_sr * p_r,
        p_sr,
        p_a * p,
        p_a,
        p_a * p,
        p_a,
    ]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    nv = int(starts[-1])
    (i_c, i_p, i_gr, i_br, i_ugr, i_ubr, i_ga, i_ba, i_uga, i_uba) = starts[:-1]

    eq_rows, eq_rhs = [], []
    bg = lin.b_d @ gt  # n_s x p
    # G^Sr GammaR[:, j] = column j of [B_d G~ diag(p), G_W'].
    for j in range(p_r):
        block = np.zeros((n_s, nv))
        block[:, i_gr + j * p_sr : i_gr + (j + 1) * p_sr] = sr.generators
        if j < p:
            block[:, i_p + j] = -bg[:, j]
            eq_rhs.append(np.zeros(n_s))
        else:
            eq_rhs.append(g_w[:, j - p])
        eq_rows.append(block)
    # G^Sr betaR + B_d c = c^Sr - A_d s - c_W'.
    block = np.zeros((n_s, nv))
    block[:, i_br : i_br + p_sr] = sr.generators
    block[:, i_c : i_c + n_a] = lin.b_d
    eq_rows.append(block)
    eq_rhs.append(sr.center - lin.a_d @ s - lin.w_prime.center)
    # G^A GammaA[:, j] = G~[:, j] p_j  and  G^A betaA + c = c^A.
    for j in range(p):
        block = np.zeros((n_a, nv))
        block[:, i_ga + j * p_a : i_ga + (j + 1) * p_a] = g_a
        block[:, i_p + j] = -gt[:, j]
        eq_rows.append(block)
        eq_rhs.append(np.zeros(n_a))
    block = np.zeros((n_a, nv))
    block[:, i_ba : i_ba + p_a] = g_a
    block[:, i_c : i_c + n_a] = np.eye(n_a)
    eq_rows.append(block)
    eq_rhs.append(box.center)

    in_rows, in_rhs = [], []

    def abs_pairs(base, ubase, count):
        for sgn in (1.0, -1.0):
            block = np.zeros((count, nv))
            block[np.arange(count), base + np.arange(count)] = sgn
            block[np.arange(count), ubase + np.arange(count)] = -1.0
            in_rows.append(block)
            in_rhs.append(np.zeros(count))

    abs_pairs(i_gr, i_ugr, p_sr * p_r)
    abs_pairs(i_br, i_ubr, p_sr)
    abs_pairs(i_ga, i_uga, p_a * p)
    abs_pairs(i_ba, i_uba, p_a)
    # Row sums over [UR rows, uR] and [UA rows, uA].
    block = np.zeros((p_sr, nv))
    for j in range(p_r):
        block[np.arange(p_sr), i_ugr + j * p_sr + np.arange(p_sr)] = 1.0
    block[np.arange(p_sr), i_ubr + np.arange(p_sr)] = 1.0
    in_rows.append(block)
    in_rhs.append((1.0 - SAFETY_MARGIN) * np.ones(p_sr))
    block = np.zeros((p_a, nv))
    for j in range(p):
        block[np.arange(p_a), i_uga + j * p_a + np.arange(p_a)] = 1.0
    block[np.arange(p_a), i_uba + np.arange(p_a)] = 1.0
    in_rows.append(block)
    in_rhs.append(np.ones(p_a))

    program = ScalingProgram(
        gt,
        free_center=True,
        n_aux=nv - n_a - p,
        a_in=np.vstack(in_rows),
        b_in=np.concatenate(in_rhs),
        a_eq=np.vstack(eq_rows),
        b_eq=np.concatenate(eq_rhs),
    )
    return program, None


def template_relevant_set(
    req: RelevantSetRequest,
    lin: LinearizedStep,
    x0: np.ndarray | None = None,
    gap_tol: float = 1e-9,
    certify: bool = True,
) -> RelevantSetResult:
    """Reachability-constrained template set for linearized dynamics.

    The eliminated form is used whenever both enclosing generator
    matrices are square and well conditioned; otherwise the general
    multiplier program runs. ``certify=True`` re-checks A^r inside the
    action box with an independent containment certificate.
    """
    sr = req.relevant_state_set
    if sr is None:
        raise ValueError("template program needs a relevant state set")
    box = req.action_space
    use_elim = False
    inv_sr = inv_a = None
    if sr.num_generators == sr.dim:
        try:
            cond = np.linalg.cond(sr.generators)
            if cond < 1e8:
                inv_sr = np.linalg.inv(sr.generators)
                inv_a = np.linalg.inv(np.diag(box.half_width))
                use_elim = True
        except np.linalg.LinAlgError:
            pass
    if use_elim:
        program, analytic = _template_program_eliminated(req, lin, inv_sr, inv_a)
    else:
        program, analytic = _template_program_general(req, lin)

    candidates = []
    if x0 is not None and x0.shape == (program.n_vars,):
        # Pull the previous optimum into the interior: shrink the
        # scalings, relax the absolute-value slack variables a little.
        cand = x0.copy()
        sl = program.scaling_slice()
        cand[:sl.start] = box.center + 0.95 * (x0[:sl.start] - box.center)
        cand[sl] = np.maximum(0.9 * x0[sl], 2.0 * program.floor)
        cand[sl.stop:] = np.abs(x0[sl.stop:]) * 1.05 + 1e-9
        candidates.append((cand, 1e3))
    candidates.append((analytic, 10.0))
    try:
        sol = _solve_with_candidates(program, candidates, gap_tol)
    except InfeasibleProgramError:
        return RelevantSetResult(
            zonotope=Zonotope(box.center), feasible=False, fallback=True
        )
    zono = program.zonotope_at(sol.x)
    cert_norm = None
    if certify:
        cert = zonotope_containment(zono, box.as_zonotope())
        if not cert.certified:
            raise RelevantSetError(
                "optimizer output failed action-box certification"
            )
        cert_norm = cert.norm
    return RelevantSetResult(
        zonotope=zono,
        feasible=True,
        solver_x=sol.x,
        scalings=sol.scalings,
        certificate_norm=cert_norm,
    )


def static_norm_ball_set(alpha_p: float, dim: int, num_generators: int) -> Zonotope:
    """Fixed power-constraint set {a : ||a||_2 <= alpha_p}, under-approximated."""
    if alpha_p <= 0:
        raise ValueError("alpha_p must be positive")
    return ball_underapprox(dim, num_generators, alpha_p)


def default_relevant_state_set(tag: str) -> Zonotope:
    """Shipped S^r defaults: per-dimension scaled state boxes.

    These are demo defaults, not invariant sets: with the benchmark
    action bounds no axis-aligned box is one-step invariant (the 2-d
    model's minimum total thrust exceeds hover; the 3-d model's tilt
    accelerates the velocities regardless of the input), so states near
    the offending faces go through the provider's fallback path. A
    properly synthesized invariant zonotope can be supplied instead and
    checked with ``TemplateSetProvider.validate``.
    """
    from .environments import QuadConfig

    if tag == "seeker":
        return IntervalBox([-10.0, -10.0], [10.0, 10.0]).as_zonotope()
    cfg = QuadConfig(model=tag)
    center = 0.5 * (cfg.state_low + cfg.state_high)
    half = 0.5 * (cfg.state_high - cfg.state_low)
    if tag == "quad2d":
        scales = np.full(6, 0.9)
    else:
        scales = np.array([0.9, 0.9, 0.9, 0.85, 0.85, 0.85, 0.5, 0.5, 0.9, 0.9, 0.9, 0.9])
    return Zonotope(center, np.diag(half * scales))


# -------------------------------------------------------------------- providers


@dataclass
class ProviderTelemetry:
    calls: int = 0
    fallbacks: int = 0

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.calls if self.calls else 0.0

    def reset(self):
        self.calls = 0
        self.fallbacks = 0


class SeekerSetProvider:
    """Per-step relevant sets for the Seeker, warm-started across steps."""

    def __init__(self, dt: float = 1.0, bound: float = 10.0, gap_tol: float = 1e-9):
        self.action_space = env_action_space("seeker")
        self.template = env_template("seeker")
        self.bounds = IntervalBox([-bound, -bound], [bound, bound])
        self.dt = dt
        self.gap_tol = gap_tol
        self.telemetry = ProviderTelemetry()
        self._warm: np.ndarray | None = None

    def compute(self, env) -> RelevantSetResult:
        st = env.state
        req = RelevantSetRequest(
            state=st.position,
            action_space=self.action_space,
            template=self.template,
            env="seeker",
            dt=self.dt,
            state_bounds=self.bounds,
            obstacle_center=st.obstacle_center,
            obstacle_radius=st.obstacle_radius,
        )
        result = seeker_relevant_set(req, x0=self._warm, gap_tol=self.gap_tol)
        self._warm = result.solver_x
        self.telemetry.calls += 1
        if result.fallback:
            self.telemetry.fallbacks += 1
        return result

    def reset_episode(self):
        self._warm = None


class TemplateSetProvider:
    """Relevant sets from the reachability-constrained template program."""

    def __init__(
        self,
        tag: str,
        relevant_state_set: Zonotope | None = None,
        dt: float = 0.1,
        eps_lin: float = 1e-3,
        gap_tol: float = 1e-9,
        n_validate: int = 0,
        validate_seed: int = 0,
        certify: bool = False,
    ):
        self.tag = tag
        self.action_space = env_action_space(tag)
        self.template = env_template(tag)
        self.relevant_state_set = (
            relevant_state_set
            if relevant_state_set is not None
            else default_relevant_state_set(tag)
        )
        self.dt = dt
        self.eps_lin = eps_lin
        self.gap_tol = gap_tol
        self.certify = certify
        self.telemetry = ProviderTelemetry()
        self._warm: np.ndarray | None = None
        self._last_good: Zonotope | None = None
        if n_validate:
            self.validate(n_validate, validate_seed)

    def _request(self, state) -> RelevantSetRequest:
        return RelevantSetRequest(
            state=np.asarray(state, dtype=float),
            action_space=self.action_space,
            template=self.template,
            env=self.tag,
            dt=self.dt,
            relevant_state_set=self.relevant_state_set,
        )

    def _disturbance(self) -> Zonotope | None:
        from .environments import QUAD2D_DISTURBANCE

        if self.tag == "quad2d":
            return Zonotope(np.zeros(2), QUAD2D_DISTURBANCE * np.eye(2))
        return None

    def validate(self, n_states: int, seed: int = 0):
        """Feasibility of the program on sampled states inside S^r."""
        rng = np.random.default_rng(seed)
        sr = self.relevant_state_set
        bad = 0
        for _ in range(n_states):
            beta = rng.uniform(-1.0, 1.0, size=sr.num_generators)
            s = sr.center + sr.generators @ beta
            res = self.compute_at(s)
            if not res.feasible:
                bad += 1
        if bad:
            raise RelevantSetError(
                f"relevant state set failed validation: {bad}/{n_states} sampled "
                "states have no feasible relevant action set"
            )

    def compute_at(self, state) -> RelevantSetResult:
        lin = linearize_step(
            self.tag, state, self.dt, self._disturbance(), self.eps_lin
        )
        req = self._request(state)
        result = template_relevant_set(
            req, lin, x0=self._warm, gap_tol=self.gap_tol, certify=self.certify
        )
        self.telemetry.calls += 1
        if result.feasible:
            self._warm = result.solver_x
            self._last_good = result.zonotope
            return result
        # Fallback chain: last certified set if it still satisfies the
        # reachability containment at this state, else a point action.
        self.telemetry.fallbacks += 1
        if self._last_good is not None and self._reach_contained(
            self._last_good, req, lin
        ):
            return RelevantSetResult(
                zonotope=self._last_good, feasible=False, fallback=True
            )
        point = self._max_slack_point(req, lin)
        return RelevantSetResult(zonotope=point, feasible=False, fallback=True)

    def _reach_contained(self, action_set: Zonotope, req, lin) -> bool:
        """Is the one-step reach set of ``action_set`` inside S^r?"""
        reach = Zonotope(
            lin.a_d @ req.state + lin.b_d @ action_set.center + lin.w_prime.center,
            np.hstack([lin.b_d @ action_set.generators, lin.w_prime.generators]),
        )
        sr = self.relevant_state_set
        if sr.num_generators == sr.dim:
            # Closed form: rows of |G_sr^-1 G_reach| plus the center offset.
            inv_sr = np.linalg.inv(sr.generators)
            rows = np.abs(inv_sr @ reach.generators).sum(axis=1)
            rows += np.abs(inv_sr @ (sr.center - reach.center))
            return bool(rows.max(initial=0.0) <= 1.0 + 1e-9)
        return zonotope_containment(reach, sr).certified

    def compute(self, env) -> RelevantSetResult:
        return self.compute_at(env.state)

    def _max_slack_point(self, req, lin) -> Zonotope:
        """Point action maximizing the reach-containment margin.

        The margin may come out negative: when no action keeps the next
        state inside S^r (the set is imperfect near some faces), the
        least-violating action is still returned so training can proceed
        with the step flagged, rather than aborting.
        """
        sr = req.relevant_state_set
        if sr.num_generators != sr.dim:
            a = req.action_space.center
            return Zonotope(a)
        inv_sr = np.linalg.inv(sr.generators)
        k_const = np.abs(inv_sr @ lin.w_prime.generators).sum(axis=1)
        beta0 = inv_sr @ (sr.center - lin.a_d @ req.state - lin.w_prime.center)
        beta_c = -inv_sr @ lin.b_d
        n_a = req.action_space.dim
        n_s = sr.dim
        # Variables [a, u (n_s), delta]; maximize delta.
        nv = n_a + n_s + 1
        rows, rhs = [], []
        for sgn in (1.0, -1.0):
            block = np.zeros((n_s, nv))
            block[:, :n_a] = sgn * beta_c
            block[np.arange(n_s), n_a + np.arange(n_s)] = -1.0
            rows.append(block)
            rhs.append(-sgn * beta0)
        block = np.zeros((n_s, nv))
        block[np.arange(n_s), n_a + np.arange(n_s)] = 1.0
        block[:, -1] = 1.0
        rows.append(block)
        rhs.append(1.0 - k_const)
        obj = np.zeros(nv)
        obj[-1] = -1.0
        bnds = [
            (float(lo), float(hi))
            for lo, hi in zip(req.action_space.lower, req.action_space.upper)
        ]
        bnds += [(0.0, None)] * n_s + [(None, 1.0)]
        res = solve_lp(
            LinearProgram(
                obj, a_in=np.vstack(rows), b_in=np.concatenate(rhs), bounds=bnds
            )
        )
        if not res.is_optimal:
            raise RelevantSetError(
                f"fallback LP failed at state {np.asarray(req.state).tolist()} "
                f"({res.status})"
            )
        return Zonotope(res.x[:n_a])

    def reset_episode(self):
        self._warm = None
        self._last_good = None


class StaticSetProvider:
    """Fixed relevant action set (power-ball style)."""

    def __init__(self, zonotope: Zonotope):
        self.zonotope = zonotope
        self.telemetry = ProviderTelemetry()

    def compute(self, env) -> RelevantSetResult:
        self.telemetry.calls += 1
        return RelevantSetResult(zonotope=self.zonotope, feasible=True)

    def compute_at(self, state) -> RelevantSetResult:
        return self.compute(None)

    def reset_episode(self):
        pass


class FullActionSetProvider(StaticSetProvider):
    """A^r forced to the whole action box (identity masking)."""

    def __init__(self, tag: str):
        super().__init__(env_action_space(tag).as_zonotope())


def make_provider(tag: str, force_full_set: bool = False, **kwargs):
    if force_full_set:
        return FullActionSetProvider(tag)
    if tag == "seeker":
        return SeekerSetProvider(**kwargs)
    if tag in ("quad2d", "quad3d"):
        return TemplateSetProvider(tag, **kwargs)
    raise ValueError(f"unknown environment {tag!r}")
