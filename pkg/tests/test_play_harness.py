"""Tests for closed-loop play of extracted feedback controls.

The feedback oracle re-derives the tabulated control pair at single nodes
with scalar loops (one-sided differences at the domain edges, first-index
tie-breaks), independently of the vectorized extraction.
"""

from __future__ import annotations

import numpy as np
import pytest

from infogame.belief_policy import (
    BeliefPolicy,
    constant_policy,
    make_node,
    one_shot_split,
)
from infogame.errors import ValidationError
from infogame.gallery import gallery_game
from infogame.game_model import GameBounds, GameSpec
from infogame.hji_solver import ValueGrid, complete_info_solve, solve_obstacle_hji
from infogame.play_harness import (
    MirrorOpponent,
    StrategyTable,
    _nearest,
    extract_strategy,
    make_opponent,
    reweighted_play,
    simulate_play,
    verify_sufficiency,
)
from infogame.sde_engine import TimeGrid

GRID = TimeGrid(0.0, 1.0, 16)


def feedback_oracle(spec, value, k, j, r):
    """Control pair at one grid node, by scalar enumeration."""
    w = value.w[k]
    x_axis = value.x
    dx = x_axis[1] - x_axis[0]
    nx = len(x_axis)
    if j == 0:
        slope = (w[1, r] - w[0, r]) / dx
    elif j == nx - 1:
        slope = (w[-1, r] - w[-2, r]) / dx
    else:
        slope = (w[j + 1, r] - w[j - 1, r]) / (2 * dx)
    q = float(value.p[r])
    t = float(value.t[k])
    xa = np.array([[x_axis[j]]])
    best = None
    for a, u in enumerate(spec.u_grid):
        worst = None
        for bi, v in enumerate(spec.v_grid):
            b = float(np.asarray(spec.drift(t, xa, u, v)).reshape(-1)[0])
            l0 = float(np.asarray(spec.costs[0](t, xa, u, v)).reshape(-1)[0])
            l1 = float(np.asarray(spec.costs[1](t, xa, u, v)).reshape(-1)[0])
            h = slope * b + q * l0 + (1.0 - q) * l1
            if worst is None or h > worst[0]:
                worst = (h, bi)
        if best is None or worst[0] < best[0]:
            best = (worst[0], a, worst[1])
    return best[1], best[2]


def null_h_game():
    """No drift, no cost, two-point control grids: controls are irrelevant."""

    def drift(t, x, u, v):
        return np.zeros((x.shape[0], 1))

    def sigma(t, x):
        return np.eye(1)

    def zero(t, x, u, v):
        return np.zeros(x.shape[0])

    return GameSpec(
        d=1, n_scenarios=2, horizon=1.0, drift=drift, sigma=sigma,
        costs=(zero, zero),
        payoffs=(lambda x: np.tanh(x[:, 0]), lambda x: -np.tanh(x[:, 0])),
        u_grid=(-1.0, 1.0), v_grid=(-1.0, 1.0),
        bounds=GameBounds(sup_b=0.0, sup_l=0.0, sup_g=1.0, lip_g=1.0,
                          sup_sigma=1.0, sup_sigma_inv=1.0, lip_x=0.0),
        name="null-H")


@pytest.fixture(scope="module")
def coupled():
    spec = gallery_game("coupled-B")
    sol = solve_obstacle_hji(spec, x_lo=-9.0, x_hi=9.0, nx=121, n_p=21,
                             store_activity=True)
    return spec, sol, extract_strategy(spec, sol.value)


def reveal_policy(p=(0.5, 0.5)):
    return one_shot_split(p, [(1.0, 0.0), (0.0, 1.0)], [p[0], p[1]], GRID)


# ---------------------------------------------------------------------------
# Nearest-node lookup
# ---------------------------------------------------------------------------


def test_nearest_snaps_ties_left_and_clamps():
    axis = np.array([0.0, 1.0, 2.0])
    vals = np.array([-5.0, 0.0, 0.49, 0.5, 0.51, 1.5, 2.0, 7.0])
    want = np.array([0, 0, 0, 0, 1, 1, 2, 2])
    np.testing.assert_array_equal(_nearest(axis, vals), want)


# ---------------------------------------------------------------------------
# Feedback extraction
# ---------------------------------------------------------------------------


def test_extraction_matches_scalar_oracle(coupled, rng):
    spec, _, _ = coupled
    # re-solve small to keep the oracle loops cheap
    small = solve_obstacle_hji(spec, x_lo=-6.0, x_hi=6.0, nx=41, n_p=9)
    table = extract_strategy(spec, small.value)
    nt, nx, n_p = table.iu.shape
    for _ in range(100):
        k = int(rng.integers(0, nt))
        j = int(rng.integers(0, nx))
        r = int(rng.integers(0, n_p))
        iu, iv = feedback_oracle(spec, small.value, k, j, r)
        assert table.iu[k, j, r] == iu
        assert table.iv[k, j, r] == iv
    # edges explicitly (one-sided differences)
    for j in (0, nx - 1):
        iu, iv = feedback_oracle(spec, small.value, 0, j, n_p // 2)
        assert table.iu[0, j, n_p // 2] == iu
        assert table.iv[0, j, n_p // 2] == iv


def test_extraction_is_bang_bang_in_the_slope():
    # with zero running cost the pair depends only on the slope sign:
    # positive slope -> informed pushes down (index 0), opponent up (index 2)
    spec = gallery_game("coupled-B", kappa=0.0)
    t = np.linspace(0.0, 1.0, 3)
    x = np.linspace(-2.0, 2.0, 9)
    p = np.linspace(0.0, 1.0, 3)
    w_up = np.broadcast_to(x[None, :, None], (3, 9, 3)).copy()
    table = extract_strategy(spec, ValueGrid(t=t, x=x, p=p, w=w_up))
    assert (table.iu == 0).all() and (table.iv == 2).all()
    table_dn = extract_strategy(spec, ValueGrid(t=t, x=x, p=p, w=-w_up))
    assert (table_dn.iu == 2).all() and (table_dn.iv == 0).all()


def test_vertex_columns_replicate_complete_information(coupled):
    spec, sol, strat = coupled
    c0 = complete_info_solve(spec, 0, x_lo=-9, x_hi=9, nx=121)
    c1 = complete_info_solve(spec, 1, x_lo=-9, x_hi=9, nx=121)
    t0 = extract_strategy(spec, c0)
    t1 = extract_strategy(spec, c1)
    np.testing.assert_array_equal(strat.iu[:, :, -1], t0.iu[:, :, 0])
    np.testing.assert_array_equal(strat.iv[:, :, -1], t0.iv[:, :, 0])
    np.testing.assert_array_equal(strat.iu[:, :, 0], t1.iu[:, :, 0])
    np.testing.assert_array_equal(strat.iv[:, :, 0], t1.iv[:, :, 0])


def test_table_lookup_snapping(coupled):
    _, _, strat = coupled
    iu, iv = strat.controls_at(0.0, np.array([strat.x[3] + 1e-9]),
                               np.array([strat.q[2] - 1e-9]))
    assert iu[0] == strat.iu[0, 3, 2] and iv[0] == strat.iv[0, 3, 2]
    # informed feedback refuses to run blind when the table has belief axes
    control = strat.informed_control()
    with pytest.raises(ValidationError):
        control(0, 0.0, np.zeros((4, 1)), None)


def test_extraction_rejects_unsupported_specs():
    with pytest.raises(ValidationError):
        extract_strategy(gallery_game("planar-E"),
                         ValueGrid(t=np.linspace(0, 1, 2),
                                   x=np.linspace(-1, 1, 3),
                                   p=np.linspace(0, 1, 2),
                                   w=np.zeros((2, 3, 2))))


# ---------------------------------------------------------------------------
# Opponent forms
# ---------------------------------------------------------------------------


def test_make_opponent_forms(coupled):
    spec, _, strat = coupled
    assert make_opponent(spec, "constant:1", GRID, 10, (0.5, 0.5)) == 1
    rnd = make_opponent(spec, "random:3", GRID, 10, (0.5, 0.5))
    assert rnd.shape == (10, GRID.n_steps)
    assert rnd.min() >= 0 and rnd.max() < len(spec.v_grid)
    rnd2 = make_opponent(spec, "random:3", GRID, 10, (0.5, 0.5))
    np.testing.assert_array_equal(rnd, rnd2)
    alt = make_opponent(spec, "alternate", GRID, 10, (0.5, 0.5))
    np.testing.assert_array_equal(alt, np.arange(GRID.n_steps) % 3)
    assert isinstance(make_opponent(spec, "mirror", GRID, 10, (0.5, 0.5)),
                      MirrorOpponent)
    myo = make_opponent(spec, "myopic-max", GRID, 10, (0.5, 0.5))
    out = myo(0, 0.0, np.zeros((6, 1)), None)
    assert out.shape == (6,) and out.min() >= 0 and out.max() < 3
    tab = make_opponent(spec, "table", GRID, 10, (0.5, 0.5), strategy=strat)
    assert callable(tab)


def test_make_opponent_rejects_bad_names(coupled):
    spec, _, _ = coupled
    with pytest.raises(ValidationError):
        make_opponent(spec, "constant:7", GRID, 10, (0.5, 0.5))
    with pytest.raises(ValidationError):
        make_opponent(spec, "table", GRID, 10, (0.5, 0.5))  # no strategy
    with pytest.raises(ValidationError, match="unknown opponent"):
        make_opponent(spec, "psychic", GRID, 10, (0.5, 0.5))


# ---------------------------------------------------------------------------
# Scoring identities
# ---------------------------------------------------------------------------


def test_scenario_conditioning_identity(coupled):
    spec, sol, strat = coupled
    rep = simulate_play(spec, strat, reveal_policy(), 0.0, 8000, 11,
                        opponent="myopic-max", reference=sol.value)
    recombined = sum(s.prior * s.mean for s in rep.per_scenario)
    assert recombined == pytest.approx(rep.aggregate, abs=1e-12)
    assert sum(s.count for s in rep.per_scenario) == rep.m
    assert sum(rep.control_usage.values()) == pytest.approx(1.0, abs=1e-12)
    assert rep.reference_value is not None
    assert rep.gap == pytest.approx(rep.aggregate - rep.reference_value)


def test_zero_prior_scenario_reported_nan():
    spec = gallery_game("coupled-B")
    sol = solve_obstacle_hji(spec, x_lo=-6, x_hi=6, nx=61, n_p=5)
    strat = extract_strategy(spec, sol.value)
    rep = simulate_play(spec, strat, constant_policy((1.0, 0.0), GRID),
                        0.0, 500, 3)
    assert np.isnan(rep.per_scenario[1].mean)
    assert rep.per_scenario[1].count == 0
    assert np.isfinite(rep.aggregate)


def test_report_serializes(coupled, tmp_path):
    spec, _, strat = coupled
    rep = simulate_play(spec, strat, reveal_policy(), 0.0, 500, 3)
    d = rep.to_dict()
    assert set(d) >= {"aggregate", "aggregate_se", "opponent", "seed", "m",
                      "per_scenario", "control_usage"}
    rep.save_json(tmp_path / "play.json")
    import json
    assert json.loads((tmp_path / "play.json").read_text())["m"] == 500


def test_play_requires_scenario_terminal_rule(coupled):
    spec, _, strat = coupled
    bare = BeliefPolicy(make_node((0.5, 0.5)), GRID, apply_terminal_rule=False)
    with pytest.raises(ValidationError, match="terminal"):
        simulate_play(spec, strat, bare, 0.0, 100, 3)


# ---------------------------------------------------------------------------
# Control-free game: everything collapses exactly
# ---------------------------------------------------------------------------


def test_opponent_irrelevant_without_coupling():
    spec = null_h_game()
    sol = solve_obstacle_hji(spec, x_lo=-6, x_hi=6, nx=61, n_p=5)
    strat = extract_strategy(spec, sol.value)
    pol = constant_policy((0.7, 0.3), GRID)
    values = [
        simulate_play(spec, strat, pol, 0.3, 4000, 9, opponent=o).aggregate
        for o in ("myopic-max", "constant:1", "random:2", "alternate", "mirror")
    ]
    assert len(set(values)) == 1  # controls never touch the dynamics
    # and the common value is the prior-weighted heat evolution
    y, w = np.polynomial.hermite.hermgauss(80)
    heat = float(w @ np.tanh(0.3 + np.sqrt(2.0) * y) / np.sqrt(np.pi))
    rep = simulate_play(spec, strat, pol, 0.3, 4000, 9)
    assert values[0] == pytest.approx((0.7 - 0.3) * heat,
                                      abs=3 * rep.aggregate_se)


def test_reweighted_route_exact_when_drift_free():
    spec = null_h_game()
    sol = solve_obstacle_hji(spec, x_lo=-6, x_hi=6, nx=61, n_p=5)
    strat = extract_strategy(spec, sol.value)
    pol = constant_policy((0.7, 0.3), GRID)
    direct = simulate_play(spec, strat, pol, 0.3, 4000, 9)
    rw = reweighted_play(spec, strat, pol, 0.3, 4000, 9)
    assert rw.aggregate == direct.aggregate  # weights identically one
    assert rw.control_usage["girsanov_clip_count"] == 0


# ---------------------------------------------------------------------------
# Guarantees of the extracted strategy
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("opponent", ["myopic-max", "constant:0", "constant:2",
                                      "random:3", "alternate", "mirror",
                                      "table"])
def test_informed_payoff_never_beats_value(coupled, opponent):
    # min-max guarantee: against every opponent the realized payoff stays at
    # or below the solved value, up to scheme bias and noise
    spec, sol, strat = coupled
    rep = simulate_play(spec, strat, reveal_policy(), 0.0, 8000, 11,
                        opponent=opponent, reference=sol.value)
    assert rep.gap <= 0.05 + 3 * rep.aggregate_se


def test_table_opponent_is_nearly_tight(coupled):
    # the tabulated best reply should extract (almost) the full value
    spec, sol, strat = coupled
    rep = simulate_play(spec, strat, reveal_policy(), 0.0, 8000, 11,
                        opponent="table", reference=sol.value)
    assert abs(rep.gap) <= 0.05 + 3 * rep.aggregate_se


def test_reweighted_agrees_with_direct_play(coupled):
    spec, _, strat = coupled
    direct = simulate_play(spec, strat, reveal_policy(), 0.0, 20_000, 23,
                           opponent="myopic-max")
    rw = reweighted_play(spec, strat, reveal_policy(), 0.0, 20_000, 23,
                         opponent="myopic-max")
    tol = 3 * (direct.aggregate_se + rw.aggregate_se) + 0.05
    assert abs(direct.aggregate - rw.aggregate) <= tol
    assert rw.control_usage["girsanov_clip_count"] == 0


# ---------------------------------------------------------------------------
# Sufficiency certificates
# ---------------------------------------------------------------------------


def test_sufficiency_passes_for_full_revelation(coupled):
    spec, sol, _ = coupled
    rep = verify_sufficiency(spec, sol, reveal_policy(), 0.0, 4000, 7)
    assert rep.passed, rep.summary()
    assert rep.max_interior_residual == 0.0  # beliefs dwell only at vertices
    assert rep.max_jump_misalign <= 1e-12    # value is affine in the belief
    assert rep.n_jumping_paths == 4000
    assert rep.piecewise_constant
    assert "PASS" in rep.summary()


def test_sufficiency_fails_for_interior_dwelling(coupled):
    # parking the belief at 0.8 keeps paths where the free equation does not
    # hold (the envelope projection moves the value there every step)
    spec, sol, _ = coupled
    pol = one_shot_split((0.5, 0.5), [(0.8, 0.2), (0.2, 0.8)], [0.5, 0.5],
                         GRID)
    rep = verify_sufficiency(spec, sol, pol, 0.0, 4000, 7)
    assert not rep.passed
    assert rep.max_interior_residual > 0.1
    assert "FAIL" in rep.summary()


def test_sufficiency_passes_when_nothing_to_reveal():
    spec = gallery_game("driftless-C")
    sol = solve_obstacle_hji(spec, x_lo=-9, x_hi=9, nx=121, n_p=21,
                             store_activity=True)
    rep = verify_sufficiency(spec, sol, constant_policy((0.5, 0.5), GRID),
                             0.3, 2000, 7)
    assert rep.passed, rep.summary()
