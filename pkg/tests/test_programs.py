import numpy as np
import pytest

from maskrl.geometry import Zonotope
from maskrl.programs import (
    InfeasibleProgramError,
    ScalingProgram,
    solve_geometric_mean,
    zonotope_containment,
)

from oracles import (
    grid_search_geometric_mean,
    point_in_polygon,
    zonotope_vertices_2d,
)


def seeker_template_box_program():
    """Seeker template, center fixed at 0, sole constraint A^r in [-1,1]^2.

    Support encoding of the box containment gives
        p1 + p2 + p3 <= 1   and   p1 + p2 + p4 <= 1.
    """
    template = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, -1.0, 0.0, 1.0]])
    a_in = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]])
    b_in = np.ones(2)
    return ScalingProgram(
        template,
        free_center=False,
        center=np.zeros(2),
        a_in=a_in,
        b_in=b_in,
    )


# ----------------------------------------------------------------- containment


def test_containment_self():
    rng = np.random.default_rng(0)
    z = Zonotope(rng.normal(size=2), rng.normal(size=(2, 4)))
    cert = zonotope_containment(z, z)
    assert cert.certified
    res = cert.residuals(z, z)
    assert res["generator"] < 1e-8
    assert res["center"] < 1e-8
    assert res["norm"] <= 1.0 + 1e-8
    # The identity certificate always satisfies the three conditions.
    ident = np.eye(4)
    assert np.abs(z.generators - z.generators @ ident).max() == 0.0
    assert np.abs(np.abs(ident).sum(axis=1) + 0.0).max() == 1.0


def test_containment_scaled_box():
    inner = Zonotope([0.0, 0.0], 0.5 * np.eye(2))
    outer = Zonotope([0.0, 0.0], np.eye(2))
    cert = zonotope_containment(inner, outer)
    assert cert.certified
    assert cert.norm == pytest.approx(0.5, abs=1e-8)


def test_containment_rejects_larger_set():
    inner = Zonotope([0.0, 0.0], 1.5 * np.eye(2))
    outer = Zonotope([0.0, 0.0], np.eye(2))
    assert not zonotope_containment(inner, outer).certified


def test_containment_point_cases():
    outer = Zonotope([1.0, 1.0], np.eye(2))
    inner = Zonotope([1.2, 0.9])
    cert = zonotope_containment(inner, outer)
    assert cert.certified
    far = Zonotope([3.0, 0.0])
    assert not zonotope_containment(far, outer).certified


def test_certified_implies_vertex_membership():
    rng = np.random.default_rng(1)
    certified_seen = 0
    for _ in range(100):
        inner = Zonotope(
            rng.uniform(-0.4, 0.4, size=2),
            rng.uniform(-0.5, 0.5, size=(2, int(rng.integers(1, 4)))),
        )
        outer = Zonotope(
            rng.uniform(-0.2, 0.2, size=2),
            rng.uniform(-1.0, 1.0, size=(2, int(rng.integers(2, 5)))),
        )
        cert = zonotope_containment(inner, outer)
        if not cert.certified:
            continue
        certified_seen += 1
        res = cert.residuals(inner, outer)
        assert res["generator"] < 1e-8
        assert res["center"] < 1e-8
        assert res["norm"] <= 1.0 + 1e-8
        outer_verts = zonotope_vertices_2d(outer.center, outer.generators)
        for v in zonotope_vertices_2d(inner.center, inner.generators):
            assert point_in_polygon(outer_verts, v, tol=1e-7)
    assert certified_seen >= 10


# ------------------------------------------------------------- geometric mean


def test_seeker_template_box_case_matches_grid_oracle():
    program = seeker_template_box_program()
    sol = solve_geometric_mean(program)
    p_oracle, val_oracle = grid_search_geometric_mean(
        program.a_in, program.b_in, 1e-4 * np.ones(4), np.ones(4), stages=4, pts=40
    )
    assert np.abs(sol.scalings - p_oracle).max() < 1e-3
    assert np.prod(sol.scalings) >= val_oracle - 1e-5  # grid sits inside
    assert np.prod(sol.scalings) == pytest.approx(val_oracle, rel=3e-3)
    # Constraints hold and both are active at the optimum.
    assert np.all(program.a_in @ sol.scalings <= program.b_in + 1e-8)
    assert np.allclose(program.a_in @ sol.scalings, 1.0, atol=1e-5)


def test_single_generator_monotone():
    program = ScalingProgram(
        np.array([[1.0]]),
        free_center=False,
        center=np.zeros(1),
        a_in=np.array([[1.0]]),
        b_in=np.array([0.7]),
    )
    sol = solve_geometric_mean(program)
    assert sol.scalings[0] == pytest.approx(0.7, abs=1e-6)


def test_random_two_generator_programs_match_grid_search():
    rng = np.random.default_rng(2)
    done = 0
    while done < 10:
        a_in = rng.uniform(0.2, 1.5, size=(3, 2))
        b_in = rng.uniform(0.5, 2.0, size=3)
        program = ScalingProgram(
            np.eye(2),
            free_center=False,
            center=np.zeros(2),
            a_in=a_in,
            b_in=b_in,
        )
        upper = np.full(2, b_in.max() / a_in.min())
        p_oracle, val_oracle = grid_search_geometric_mean(
            a_in, b_in, 1e-4 * np.ones(2), upper, stages=4, pts=100
        )
        if p_oracle is None:
            continue
        sol = solve_geometric_mean(program)
        assert np.prod(sol.scalings) == pytest.approx(val_oracle, rel=1e-3)
        done += 1


def test_free_center_variable():
    # Template box inside [0, 2] x [-1, 1]: center must move to [1, 0].
    template = np.eye(2)
    # Support encoding rows over variables [c1, c2, p1, p2]:
    #   +-c_k + p_k <= bounds
    a_in = np.array(
        [
            [1.0, 0.0, 1.0, 0.0],
            [-1.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 1.0],
            [0.0, -1.0, 0.0, 1.0],
        ]
    )
    b_in = np.array([2.0, 0.0, 1.0, 1.0])
    program = ScalingProgram(template, free_center=True, a_in=a_in, b_in=b_in)
    sol = solve_geometric_mean(program)
    assert np.allclose(sol.center, [1.0, 0.0], atol=1e-5)
    assert np.allclose(sol.scalings, [1.0, 1.0], atol=1e-5)


def test_permutation_invariance():
    program = seeker_template_box_program()
    base = solve_geometric_mean(program)
    permuted = ScalingProgram(
        program.template,
        free_center=False,
        center=np.zeros(2),
        a_in=program.a_in[::-1].copy(),
        b_in=program.b_in[::-1].copy(),
    )
    other = solve_geometric_mean(permuted)
    assert np.abs(base.scalings - other.scalings).max() < 1e-6


def test_barrier_path_monotone():
    program = seeker_template_box_program()
    sol = solve_geometric_mean(program)
    path = np.array(sol.barrier_objectives)
    assert np.all(np.diff(path) >= -1e-9)


def test_infeasible_is_typed():
    program = ScalingProgram(
        np.array([[1.0]]),
        free_center=False,
        center=np.zeros(1),
        a_in=np.array([[1.0]]),
        b_in=np.array([-1.0]),  # p <= -1 contradicts p > 0
    )
    with pytest.raises(InfeasibleProgramError):
        solve_geometric_mean(program)


def test_warm_start_matches_cold_start():
    program = seeker_template_box_program()
    cold = solve_geometric_mean(program)
    warm = solve_geometric_mean(program, x0=np.full(4, 0.05))
    assert np.abs(cold.scalings - warm.scalings).max() < 1e-6


def test_kkt_residual_reported():
    sol = solve_geometric_mean(seeker_template_box_program())
    assert sol.kkt_residual <= 1e-6


def test_template_validation():
    with pytest.raises(ValueError):
        ScalingProgram(np.array([[1.0, 2.0], [2.0, 4.0]]))  # rank 1
    with pytest.raises(ValueError):
        ScalingProgram(np.eye(2), free_center=False)  # center missing
