import numpy as np
import pytest
from scipy.linalg import expm

from maskrl.environments import SEEKER_TEMPLATE, SeekerEnv, env_action_space
from maskrl.geometry import (
    IntervalBox,
    Zonotope,
    contains_point,
    minkowski_sum,
    support_function,
)
from maskrl.relevant_sets import (
    FullActionSetProvider,
    RelevantSetRequest,
    SeekerSetProvider,
    TemplateSetProvider,
    _expm_and_integral,
    default_relevant_state_set,
    linearize_step,
    seeker_relevant_set,
    static_norm_ball_set,
    template_relevant_set,
)

from oracles import grid_search_geometric_mean

ACTION_BOX = IntervalBox([-1.0, -1.0], [1.0, 1.0])
ARENA = IntervalBox([-10.0, -10.0], [10.0, 10.0])


def seeker_request(state, obstacle=None, radius=1.0):
    return RelevantSetRequest(
        state=np.asarray(state, dtype=float),
        action_space=ACTION_BOX,
        template=SEEKER_TEMPLATE,
        env="seeker",
        dt=1.0,
        state_bounds=ARENA,
        obstacle_center=None if obstacle is None else np.asarray(obstacle, float),
        obstacle_radius=radius,
    )


# ------------------------------------------------------------- linearization


def test_expm_series_double_integrator():
    j = np.array([[0.0, 1.0], [0.0, 0.0]])
    a_d, phi1 = _expm_and_integral(j, 0.1)
    assert np.allclose(a_d, [[1.0, 0.1], [0.0, 1.0]], atol=1e-15)
    assert np.allclose(phi1, [[0.1, 0.005], [0.0, 0.1]], atol=1e-15)


def test_expm_series_matches_scipy_on_stiff_block():
    rng = np.random.default_rng(0)
    for _ in range(10):
        j = rng.normal(size=(5, 5)) * 20.0
        a_d, phi1 = _expm_and_integral(j, 0.1)
        assert np.allclose(a_d, expm(j * 0.1), rtol=1e-12, atol=1e-12)
        aug = np.zeros((10, 10))
        aug[:5, :5] = j
        aug[:5, 5:] = np.eye(5)
        assert np.allclose(phi1, expm(aug * 0.1)[:5, 5:], rtol=1e-11, atol=1e-12)


def test_linearize_seeker_exact():
    lin = linearize_step("seeker", np.zeros(2), 1.0, None, eps_lin=0.0)
    assert np.allclose(lin.a_d, np.eye(2))
    assert np.allclose(lin.b_d, np.eye(2))
    assert lin.w_prime.num_generators == 0
    assert np.allclose(lin.w_prime.center, 0.0)


def test_linearize_quad2d_drift_carries_gravity():
    # At theta = 0 the affine drift includes -g + thrust_mid on zd.
    lin = linearize_step("quad2d", np.zeros(6), 0.1, None, eps_lin=0.0)
    # One discrete step from the origin with the midpoint action must match
    # integrating the dynamics (linear at theta=0 for fixed action).
    a_mid = env_action_space("quad2d").center
    from maskrl.environments import rk4_step

    exact = rk4_step("quad2d", np.zeros(6), a_mid, None, 0.1)
    lin_step = lin.a_d @ np.zeros(6) + lin.b_d @ a_mid + lin.w_prime.center
    assert np.abs(exact - lin_step).max() < 1e-4  # only curvature differs


def test_linearize_disturbance_inflation():
    w = Zonotope(np.zeros(2), 0.08 * np.eye(2))
    lin = linearize_step("quad2d", np.zeros(6), 0.1, w, eps_lin=1e-3)
    # 2 disturbance generators plus 6 inflation generators.
    assert lin.w_prime.num_generators == 8
    assert support_function(lin.w_prime, np.array([0, 0, 1.0, 0, 0, 0])) > 0


# ------------------------------------------------------------ seeker program


def test_seeker_inactive_constraints_reach_template_optimum():
    res = seeker_relevant_set(seeker_request([0.0, 0.0], obstacle=[100.0, 100.0]))
    assert res.feasible
    p_oracle, _ = grid_search_geometric_mean(
        np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]]),
        np.ones(2),
        1e-4 * np.ones(4),
        np.ones(4),
        stages=4,
        pts=40,
    )
    assert np.abs(res.scalings - p_oracle).max() < 1e-3
    assert np.abs(res.zonotope.center).max() < 1e-6


def test_seeker_boundary_constraint_active():
    res = seeker_relevant_set(seeker_request([9.5, 0.0]))
    shifted = minkowski_sum(Zonotope(np.array([9.5, 0.0])), res.zonotope)
    assert support_function(shifted, [1.0, 0.0]) == pytest.approx(10.0, abs=1e-6)


def test_seeker_action_box_containment():
    rng = np.random.default_rng(1)
    for _ in range(25):
        state = rng.uniform(-9.0, 9.0, size=2)
        obstacle = rng.uniform(-9.0, 9.0, size=2)
        radius = float(rng.uniform(1.0, 3.0))
        if np.linalg.norm(obstacle - state) <= radius + 1e-3:
            continue
        res = seeker_relevant_set(seeker_request(state, obstacle, radius))
        if not res.feasible:
            continue
        z = res.zonotope
        for k, l in enumerate(np.eye(2)):
            assert support_function(z, l) <= 1.0 + 1e-8
            assert support_function(z, -l) <= 1.0 + 1e-8


def test_seeker_monte_carlo_safety():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 200:
        state = rng.uniform(-9.5, 9.5, size=2)
        obstacle = rng.uniform(-9.5, 9.5, size=2)
        radius = float(rng.uniform(1.0, 3.0))
        if np.linalg.norm(obstacle - state) <= radius + 1e-6:
            continue
        res = seeker_relevant_set(seeker_request(state, obstacle, radius))
        if not res.feasible:
            continue
        z = res.zonotope
        betas = rng.uniform(-1.0, 1.0, size=(200, z.num_generators))
        actions = z.center + betas @ z.generators.T
        nxt = state + actions  # dt = 1
        assert np.all(np.abs(nxt) <= 10.0 + 1e-9)
        dists = np.linalg.norm(nxt - obstacle, axis=1)
        assert np.all(dists >= radius - 1e-9)
        checked += 1


def test_seeker_fallback_in_corner_wedge():
    # Wedged against the corner with the obstacle tangent plane closer than
    # the safety margin: the program is infeasible and the fallback point
    # action still steps safely (on the tangent plane, inside the arena).
    state = np.array([10.0 - 1e-8, 10.0 - 1e-8])
    radius = 1.0
    obstacle = state - (radius + 1e-7) / np.sqrt(2.0) * np.ones(2)
    res = seeker_relevant_set(seeker_request(state, obstacle, radius))
    assert res.fallback and not res.feasible
    assert res.zonotope.num_generators == 0
    nxt = state + res.zonotope.center
    assert np.all(np.abs(nxt) <= 10.0 + 1e-9)
    assert np.linalg.norm(nxt - obstacle) >= radius - 1e-9


def test_seeker_precondition_errors():
    with pytest.raises(Exception):
        seeker_relevant_set(seeker_request([10.5, 0.0]))
    with pytest.raises(Exception):
        seeker_relevant_set(seeker_request([0.0, 0.0], obstacle=[0.1, 0.0], radius=1.0))


# ----------------------------------------------------------- template program


def test_template_matches_seeker_on_boundary_scene():
    state = np.array([9.2, -3.0])
    no_obstacle = seeker_relevant_set(seeker_request(state))
    lin = linearize_step("seeker", state, 1.0, None, eps_lin=0.0)
    req = RelevantSetRequest(
        state=state,
        action_space=ACTION_BOX,
        template=SEEKER_TEMPLATE,
        env="seeker",
        dt=1.0,
        relevant_state_set=ARENA.as_zonotope(),
    )
    res = template_relevant_set(req, lin)
    assert res.feasible
    assert np.abs(res.scalings - no_obstacle.scalings).max() < 1e-4


def test_template_reduces_to_box_case():
    # S^r = whole state box, no disturbance, state at the center: the reach
    # constraint is slack and the optimum matches the pure box program.
    state = np.zeros(2)
    lin = linearize_step("seeker", state, 1.0, None, eps_lin=0.0)
    req = RelevantSetRequest(
        state=state,
        action_space=ACTION_BOX,
        template=SEEKER_TEMPLATE,
        env="seeker",
        dt=1.0,
        relevant_state_set=ARENA.as_zonotope(),
    )
    res = template_relevant_set(req, lin)
    assert np.allclose(sorted(res.scalings), [0.25, 0.25, 0.5, 0.5], atol=1e-5)


def test_template_shrinking_state_set_never_helps():
    state = np.array([3.0, 1.0])
    lin = linearize_step("seeker", state, 1.0, None, eps_lin=0.0)
    objectives = []
    for scale in (1.0, 0.5):
        req = RelevantSetRequest(
            state=state,
            action_space=ACTION_BOX,
            template=SEEKER_TEMPLATE,
            env="seeker",
            dt=1.0,
            relevant_state_set=Zonotope(np.zeros(2), scale * 10.0 * np.eye(2)),
        )
        res = template_relevant_set(req, lin)
        objectives.append(np.log(res.scalings).sum())
    assert objectives[1] <= objectives[0] + 1e-9


def test_template_certificate_and_reach_containment():
    prov = TemplateSetProvider("quad3d", n_validate=0, certify=True)
    s = prov.relevant_state_set.center
    res = prov.compute_at(s)
    assert res.feasible
    assert res.certificate_norm is not None and res.certificate_norm <= 1.0 + 1e-8
    lin = linearize_step("quad3d", s, prov.dt, None, prov.eps_lin)
    assert prov._reach_contained(res.zonotope, prov._request(s), lin)


def test_template_general_path_matches_eliminated():
    # Force the general multiplier program by giving S^r a redundant
    # generator; optimum must agree with the eliminated encoding.
    state = np.array([5.0, 2.0])
    lin = linearize_step("seeker", state, 1.0, None, eps_lin=0.0)
    sr_square = ARENA.as_zonotope()
    gens = np.hstack([sr_square.generators, np.zeros((2, 1))])
    req_sq = RelevantSetRequest(
        state=state,
        action_space=ACTION_BOX,
        template=SEEKER_TEMPLATE,
        env="seeker",
        dt=1.0,
        relevant_state_set=sr_square,
    )
    req_gen = RelevantSetRequest(
        state=state,
        action_space=ACTION_BOX,
        template=SEEKER_TEMPLATE,
        env="seeker",
        dt=1.0,
        relevant_state_set=Zonotope(sr_square.center, gens),
    )
    res_sq = template_relevant_set(req_sq, lin)
    res_gen = template_relevant_set(req_gen, lin)
    assert np.abs(np.log(res_sq.scalings).sum() - np.log(res_gen.scalings).sum()) < 1e-4


def test_template_fallback_flags():
    prov = TemplateSetProvider("quad2d", n_validate=0)
    # Upper vertical-velocity face: thrust exceeds hover, no feasible set.
    s = np.array([0.0, 1.15, 0.0, 0.9, 0.0, 0.0])
    res = prov.compute_at(s)
    assert not res.feasible and res.fallback
    assert prov.telemetry.fallbacks == 1
    a = res.zonotope.center
    assert np.all(a >= prov.action_space.lower - 1e-9)
    assert np.all(a <= prov.action_space.upper + 1e-9)


# ------------------------------------------------------------ static ball set


def test_static_ball_1d_interval():
    z = static_norm_ball_set(0.7, 1, 1)
    assert np.allclose(z.center, [0.0])
    assert np.allclose(np.abs(z.generators), [[0.7]])


def test_static_ball_36_generators_bounded():
    z = static_norm_ball_set(1.0, 6, 36)
    assert z.num_generators == 36
    rng = np.random.default_rng(3)
    betas = rng.uniform(-1.0, 1.0, size=(20000, 36))
    pts = z.center + betas @ z.generators.T
    assert np.linalg.norm(pts, axis=1).max() <= 1.0 + 1e-9


def test_ball_vs_box_volume_paper_value():
    # Unit 6-ball over the [-1,1]^6 box is ~8% by volume.
    rng = np.random.default_rng(4)
    pts = rng.uniform(-1.0, 1.0, size=(200000, 6))
    ratio = float(np.mean(np.linalg.norm(pts, axis=1) <= 1.0))
    assert 0.07 <= ratio <= 0.09
    exact = np.pi**3 / 6.0 / 2.0**6
    assert ratio == pytest.approx(exact, abs=0.005)


# -------------------------------------------------------------------- provider


def test_seeker_provider_warm_start_consistency():
    env = SeekerEnv(seed=5)
    env.reset()
    prov = SeekerSetProvider()
    first = prov.compute(env)
    again = prov.compute(env)  # warm-started second solve, same state
    assert np.abs(first.scalings - again.scalings).max() < 1e-6
    assert prov.telemetry.calls == 2 and prov.telemetry.fallbacks == 0


def test_full_action_set_provider():
    prov = FullActionSetProvider("seeker")
    res = prov.compute(None)
    assert np.allclose(res.zonotope.center, 0.0)
    assert np.allclose(res.zonotope.generators, np.eye(2))
    assert contains_point(res.zonotope, [0.99, -0.99])


def test_default_relevant_state_sets_inside_state_box():
    for tag in ("quad2d", "quad3d"):
        sr = default_relevant_state_set(tag)
        from maskrl.environments import QuadConfig

        cfg = QuadConfig(model=tag)
        hull = sr.interval_hull()
        assert np.all(hull.lower >= cfg.state_low - 1e-12)
        assert np.all(hull.upper <= cfg.state_high + 1e-12)


def test_template_validate_raises_on_bad_set():
    with pytest.raises(Exception):
        TemplateSetProvider("quad2d", n_validate=40, validate_seed=0)
