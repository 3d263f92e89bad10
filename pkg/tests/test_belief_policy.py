"""Tests for belief split trees: validation, sampling, gluing, persistence.

The second-moment oracle is a two-line enumeration over the split's finite
law, so the expected numbers below (0.41 before the terminal jump, 0.5 at
it) are computed without touching the sampler.
"""

from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest

from infogame.errors import ValidationError
from infogame.gallery import gallery_game
from infogame.belief_policy import (
    MAX_EVENT_CHAIN,
    BeliefPolicy,
    BeliefSampler,
    GlueCase,
    SplitEvent,
    StatePartition,
    constant_policy,
    glue,
    load_policy,
    make_node,
    one_shot_split,
    policy_from_dict,
    policy_to_dict,
    sample_belief_paths,
    save_policy,
)
from infogame.sde_engine import SALT_SPLIT, TimeGrid, simulate_uncontrolled, uniform_draws


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def discrete_second_moment(atoms, weights) -> float:
    """E[q_0^2] for a discrete law over belief atoms."""
    return float(sum(w * a[0] ** 2 for w, a in zip(weights, atoms)))


# Frozen: atoms (0.9, 0.1) / (0.1, 0.9) with equal weights
ATOMS = ((0.9, 0.1), (0.1, 0.9))
HALF = (Fraction(1, 2), Fraction(1, 2))
assert discrete_second_moment(ATOMS, (0.5, 0.5)) == pytest.approx(0.41)
# at the terminal jump q_0 becomes Bernoulli(E q_0) = Bernoulli(0.5):
assert discrete_second_moment(((1.0, 0.0), (0.0, 1.0)), (0.5, 0.5)) == 0.5


def grid16():
    return TimeGrid(0.0, 1.0, 16)


# ---------------------------------------------------------------------------
# Validation: one test per violation kind
# ---------------------------------------------------------------------------


def kinds(policy):
    return sorted(v.kind for v in policy.validate())


def test_valid_constant_and_one_shot():
    grid = grid16()
    assert constant_policy((0.5, 0.5), grid).validate() == []
    pol = one_shot_split((0.5, 0.5), ATOMS, HALF, grid, time_index=3)
    assert pol.validate() == []
    assert pol.n_nodes == 3
    assert pol.vertex_node_id(1) == 4


def test_martingale_violation_frozen_residual():
    # children at the two vertices with weights (0.3, 0.7) under a uniform
    # prior: the weighted average is (0.3, 0.7), off by exactly 0.2
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=0,
        branches=((0.3, make_node((1.0, 0.0))), (0.7, make_node((0.0, 1.0)))),
    )])
    pol = BeliefPolicy(root, grid16())
    bad = [v for v in pol.validate() if v.kind == "martingale"]
    assert len(bad) == 1
    assert bad[0].residual == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValidationError):
        pol.require_valid()


def test_simplex_violation():
    root = make_node((0.6, 0.6))
    assert kinds(BeliefPolicy(root, grid16())) == ["simplex"]


def test_weight_sum_violation_exact_and_float():
    for w in ((Fraction(1, 3), Fraction(1, 3)), (0.3, 0.3)):
        root = make_node((0.5, 0.5), events=[SplitEvent(
            time_index=0,
            branches=((w[0], make_node((0.9, 0.1))), (w[1], make_node((0.1, 0.9)))),
        )])
        assert "weight-sum" in kinds(BeliefPolicy(root, grid16()))


def test_negative_weight_violation():
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=0,
        branches=((1.0, make_node((0.5, 0.5))), (0.0, make_node((0.9, 0.1)))),
    )])
    assert "negative-weight" in kinds(BeliefPolicy(root, grid16()))


def test_time_order_violations():
    grid = grid16()
    # event at the terminal index is out of range 0..n-1
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=16, branches=((Fraction(1), make_node((0.5, 0.5))),),
    )])
    assert "time-order" in kinds(BeliefPolicy(root, grid))
    # child event earlier than its parent's
    child = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=2, branches=((Fraction(1), make_node((0.5, 0.5))),),
    )])
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=5, branches=((Fraction(1), child),),
    )])
    assert "time-order" in kinds(BeliefPolicy(root, grid))


def test_cell_violations():
    grid = grid16()
    # gated event but no partition on the policy
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=1, cell=0, branches=((Fraction(1), make_node((0.5, 0.5))),),
    )])
    assert "cell" in kinds(BeliefPolicy(root, grid))
    # two ungated events at the same time on one node
    root = make_node((0.5, 0.5), events=[
        SplitEvent(time_index=1, branches=((Fraction(1), make_node((0.5, 0.5))),)),
        SplitEvent(time_index=1, branches=((Fraction(1), make_node((0.5, 0.5))),)),
    ])
    assert "cell" in kinds(BeliefPolicy(root, grid))
    # cell id outside the partition
    part = StatePartition(((0.0,),))
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=1, cell=5, branches=((Fraction(1), make_node((0.5, 0.5))),),
    )])
    assert "cell" in kinds(BeliefPolicy(root, grid, partition=part))


def test_event_depth_violation():
    # a chain of MAX_EVENT_CHAIN + 1 single-branch events at one time
    node = make_node((0.5, 0.5))
    for _ in range(MAX_EVENT_CHAIN + 1):
        node = make_node((0.5, 0.5), events=[SplitEvent(
            time_index=3, branches=((Fraction(1), node),),
        )])
    assert "event-depth" in kinds(BeliefPolicy(node, grid16()))


def test_terminal_vertex_violation_only_when_rule_disabled():
    grid = grid16()
    root = make_node((0.5, 0.5))
    assert BeliefPolicy(root, grid, apply_terminal_rule=True).validate() == []
    pol = BeliefPolicy(make_node((0.5, 0.5)), grid, apply_terminal_rule=False)
    assert kinds(pol) == ["terminal-vertex"]
    # vertex leaves are fine without the rule
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=0,
        branches=((Fraction(1, 2), make_node((1, 0))),
                  (Fraction(1, 2), make_node((0, 1)))),
    )])
    assert BeliefPolicy(root, grid, apply_terminal_rule=False).validate() == []


def test_shared_node_objects_rejected():
    shared = make_node((0.5, 0.5))
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=0, branches=((Fraction(1, 2), shared), (Fraction(1, 2), shared)),
    )])
    with pytest.raises(ValidationError):
        BeliefPolicy(root, grid16())


def test_one_shot_split_argument_guard():
    with pytest.raises(ValidationError):
        one_shot_split((0.5, 0.5), ATOMS, (0.5, 0.25, 0.25), grid16())


def test_exact_fraction_martingale_is_checked_exactly():
    # weights 1/3, 2/3 with atoms (3/4, 1/4), (3/8, 5/8) average exactly to
    # the prior (1/2, 1/2) in rational arithmetic; nudging one atom by 1e-13
    # (below float tolerances) must still be caught when entries are exact
    atoms = ((Fraction(3, 4), Fraction(1, 4)), (Fraction(3, 8), Fraction(5, 8)))
    weights = (Fraction(1, 3), Fraction(2, 3))
    pol = one_shot_split((Fraction(1, 2), Fraction(1, 2)), atoms, weights, grid16())
    assert pol.validate() == []
    bad_atoms = ((Fraction(3, 4) + Fraction(1, 10**13), Fraction(1, 4)),
                 (Fraction(3, 8), Fraction(5, 8)))
    root = make_node((Fraction(1, 2), Fraction(1, 2)), events=[SplitEvent(
        time_index=0,
        branches=tuple((w, make_node(a)) for w, a in zip(weights, bad_atoms)),
    )])
    bad = BeliefPolicy(root, grid16())
    assert any(v.kind in ("martingale", "simplex") for v in bad.validate())


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sampled_bundle(policy, m=20_000, seed=5):
    spec = gallery_game("driftless-C")
    bundle = simulate_uncontrolled(spec, 0.0, [0.0], policy.grid, m, seed)
    return sample_belief_paths(policy, bundle, seed=seed)


def test_one_shot_second_moment_matches_enumeration():
    pol = one_shot_split((0.5, 0.5), ATOMS, HALF, grid16(), time_index=0)
    bundle = sampled_bundle(pol)
    m = bundle.m
    q = bundle.beliefs[:, :, 0]
    # between the split and the horizon the law is the two-atom law
    want_mid = discrete_second_moment(ATOMS, (0.5, 0.5))
    for k in (0, 8, 15):
        got = float((q[:, k] ** 2).mean())
        se = float((q[:, k] ** 2).std() / np.sqrt(m))
        assert got == pytest.approx(want_mid, abs=3 * se)
    # at the horizon the forced jump makes q_0 Bernoulli(1/2)
    got_t = float((q[:, 16] ** 2).mean())
    se_t = float((q[:, 16] ** 2).std() / np.sqrt(m))
    assert got_t == pytest.approx(0.5, abs=3 * se_t)
    assert set(np.unique(q[:, 16])) == {0.0, 1.0}


def test_belief_path_is_martingale_in_time():
    pol = one_shot_split((0.5, 0.5), ATOMS, HALF, grid16(), time_index=4)
    bundle = sampled_bundle(pol)
    m = bundle.m
    for k in range(17):
        mean_k = bundle.beliefs[:, k, 0].mean()
        se = bundle.beliefs[:, k, 0].std() / np.sqrt(m) + 1e-12
        assert mean_k == pytest.approx(0.5, abs=4 * se)


def test_terminal_frequencies_match_atom_conditionals():
    pol = one_shot_split((0.5, 0.5), ATOMS, HALF, grid16(), time_index=0)
    bundle = sampled_bundle(pol)
    m = bundle.m
    q0 = bundle.beliefs[:, 0, 0]
    term = bundle.beliefs[:, 16, 0]
    # branch frequencies
    hi = q0 > 0.5
    assert abs(hi.mean() - 0.5) <= 3 * 0.5 / np.sqrt(m)
    # conditional vertex frequency: P(vertex 0 | q = 0.9) = 0.9
    for mask, pr in ((hi, 0.9), (~hi, 0.1)):
        freq = term[mask].mean()
        se = np.sqrt(pr * (1 - pr) / mask.sum())
        assert freq == pytest.approx(pr, abs=4 * se)
    # node ids at the horizon are the synthetic vertex ids
    ids = set(np.unique(bundle.belief_nodes[:, 16]))
    assert ids == {pol.vertex_node_id(0), pol.vertex_node_id(1)}


def test_split_noise_independent_of_brownian_noise():
    pol = one_shot_split((0.5, 0.5), ATOMS, HALF, grid16(), time_index=0)
    bundle = sampled_bundle(pol, m=20_000, seed=5)
    z = bundle.dB[:, 0, 0] / np.sqrt(bundle.grid.dt)
    hi = (bundle.beliefs[:, 0, 0] > 0.5).astype(float)
    corr = np.corrcoef(z, hi)[0, 1]
    assert abs(corr) <= 4.0 / np.sqrt(bundle.m)


def test_sampler_requires_ordered_steps():
    pol = constant_policy((0.5, 0.5), grid16())
    sampler = BeliefSampler(pol, m=10, seed=0)
    with pytest.raises(ValidationError):
        sampler.step(1, None)
    sampler2 = BeliefSampler(pol, m=10, seed=0)
    sampler2.step(0, None)
    with pytest.raises(ValidationError):
        sampler2.step(0, None)


def test_gated_event_requires_state():
    part = StatePartition(((0.0,),))
    cont = make_node((0.5, 0.5))
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=1, cell=1, branches=((Fraction(1), cont),),
    )])
    pol = BeliefPolicy(root, grid16(), partition=part)
    sampler = BeliefSampler(pol, m=4, seed=0)
    sampler.step(0, None)  # no event at 0, state not needed
    with pytest.raises(ValidationError):
        sampler.step(1, None)


def test_vertex_prior_is_remapped_to_synthetic_id():
    pol = constant_policy((1.0, 0.0), grid16())
    bundle = sampled_bundle(pol, m=100)
    np.testing.assert_array_equal(bundle.beliefs[:, 16, 0], np.ones(100))
    np.testing.assert_array_equal(bundle.belief_nodes[:, 16],
                                  np.full(100, pol.vertex_node_id(0)))
    # before the horizon the path sits at the root node
    np.testing.assert_array_equal(bundle.belief_nodes[:, 3], np.zeros(100))


def test_sample_belief_paths_rejects_grid_mismatch():
    pol = constant_policy((0.5, 0.5), TimeGrid(0.0, 1.0, 8))
    spec = gallery_game("driftless-C")
    bundle = simulate_uncontrolled(spec, 0.0, [0.0], grid16(), 10, 0)
    with pytest.raises(ValidationError):
        sample_belief_paths(pol, bundle, seed=0)


# ---------------------------------------------------------------------------
# Gluing
# ---------------------------------------------------------------------------


def test_glue_single_policy_is_transparent():
    grid = grid16()
    pol = one_shot_split((0.5, 0.5), ATOMS, HALF, grid, time_index=4)
    composite = glue([pol], time_index=2, cases=[GlueCase(0)])
    assert composite.validate() == []
    a = sampled_bundle(pol, m=4000, seed=9)
    b = sampled_bundle(composite, m=4000, seed=9)
    # the router consumes no randomness, so the belief paths coincide
    np.testing.assert_array_equal(a.beliefs, b.beliefs)


def test_glue_two_constants_is_constant():
    grid = grid16()
    a = constant_policy((0.5, 0.5), grid)
    b = constant_policy((0.5, 0.5), grid)
    composite = glue([a, b], time_index=3, cases=[GlueCase(0)])
    bundle = sampled_bundle(composite, m=2000, seed=3)
    np.testing.assert_array_equal(bundle.beliefs[:, :16, 0], np.full((2000, 16), 0.5))


def test_glue_cell_gated_composite_replays_exactly():
    # cell 0 (x < 0): stay at the prior; cell 1 (x >= 0): run the one-shot
    # split.  The oracle below replays the sampler's documented uniform
    # consumption rule directly from the raw uniform stream.
    grid = grid16()
    part = StatePartition(((0.0,),))
    k_glue = 2
    prior = (Fraction(1, 2), Fraction(1, 2))
    stay = BeliefPolicy(make_node(prior), grid, partition=part)
    split_root = make_node(prior, events=[SplitEvent(
        time_index=k_glue,
        branches=((HALF[0], make_node(ATOMS[0])), (HALF[1], make_node(ATOMS[1]))),
    )])
    tell = BeliefPolicy(split_root, grid, partition=part)
    composite = glue([stay, tell], time_index=k_glue,
                     cases=[GlueCase(0, cells=(0,)), GlueCase(1, cells=(1,))])
    assert composite.validate() == []

    m, seed = 5000, 21
    spec = gallery_game("driftless-C")
    bundle = simulate_uncontrolled(spec, 0.0, [0.0], grid, m, seed)
    sampled = sample_belief_paths(composite, bundle, seed=seed)

    # oracle replay from the raw stream
    u = uniform_draws(grid, m, seed, slots=MAX_EVENT_CHAIN, salt=SALT_SPLIT)
    in_cell1 = bundle.X[:, k_glue, 0] >= 0.0
    q_want = np.full(m, 0.5)
    q_want[in_cell1 & (u[:, k_glue, 0] < 0.5)] = 0.9
    q_want[in_cell1 & (u[:, k_glue, 0] >= 0.5)] = 0.1
    np.testing.assert_allclose(sampled.beliefs[:, k_glue, 0], q_want, atol=0)
    # before the glue everyone is at the prior
    np.testing.assert_array_equal(sampled.beliefs[:, k_glue - 1, 0], np.full(m, 0.5))
    # both cells are actually populated, otherwise this test proves nothing
    assert 0 < in_cell1.sum() < m


def test_glue_error_cases():
    grid = grid16()
    a = constant_policy((0.5, 0.5), grid)
    b = constant_policy((0.5, 0.5), TimeGrid(0.0, 1.0, 8))
    with pytest.raises(ValidationError):
        glue([a, b], time_index=2, cases=[GlueCase(0)])
    c = constant_policy((0.25, 0.75), grid)
    with pytest.raises(ValidationError):
        glue([a, c], time_index=2, cases=[GlueCase(0)])  # differing prefix
    with pytest.raises(ValidationError):
        glue([a], time_index=0, cases=[GlueCase(0)])  # not interior
    with pytest.raises(ValidationError):
        glue([a], time_index=16, cases=[GlueCase(0)])
    with pytest.raises(ValidationError):
        glue([a], time_index=2, cases=[GlueCase(0), GlueCase(0)])  # overlap
    with pytest.raises(ValidationError):
        glue([a], time_index=2, cases=[GlueCase(1)])  # unknown policy
    part = StatePartition(((0.0,),))
    pa = BeliefPolicy(make_node((0.5, 0.5)), grid, partition=part)
    pb = BeliefPolicy(make_node((0.5, 0.5)), grid, partition=part)
    with pytest.raises(ValidationError):
        glue([pa, pb], time_index=2, cases=[GlueCase(0, cells=(0,))])  # cell 1 uncovered
    with pytest.raises(ValidationError):
        glue([pa, pb], time_index=2,
             cases=[GlueCase(0, cells=(0,)), GlueCase(1, cells=(7,))])  # unknown cell
    with pytest.raises(ValidationError):
        glue([], time_index=2, cases=[])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_json_roundtrip_preserves_exact_weights(tmp_path):
    grid = grid16()
    atoms = ((Fraction(3, 4), Fraction(1, 4)), (Fraction(3, 8), Fraction(5, 8)))
    weights = (Fraction(1, 3), Fraction(2, 3))
    pol = one_shot_split((Fraction(1, 2), Fraction(1, 2)), atoms, weights,
                         grid, time_index=5)
    d = policy_to_dict(pol)
    assert d["format"] == "belief-policy"
    back = policy_from_dict(d)
    assert back == pol
    assert back.validate() == []
    # the exact rationals survive (1/3 is not representable in binary float)
    ev = back.root.events[0]
    assert ev.branches[0][0] == Fraction(1, 3)
    assert isinstance(ev.branches[0][0], Fraction)

    path = tmp_path / "policy.json"
    save_policy(pol, path)
    assert load_policy(path) == pol
    # the file is plain json
    with open(path) as fh:
        assert json.load(fh)["format"] == "belief-policy"


def test_roundtrip_keeps_partition_and_gating(tmp_path):
    grid = grid16()
    part = StatePartition(((0.0, 1.5),))
    cont = make_node((0.5, 0.5))
    root = make_node((0.5, 0.5), events=[SplitEvent(
        time_index=1, cell=2, branches=((Fraction(1), cont),),
    )])
    pol = BeliefPolicy(root, grid, partition=part)
    back = policy_from_dict(policy_to_dict(pol))
    assert back == pol
    assert back.partition == part
    assert back.root.events[0].cell == 2


def test_float_beliefs_roundtrip_bitwise():
    pol = one_shot_split((0.5, 0.5), ATOMS, (0.5, 0.5), grid16(), time_index=0)
    back = policy_from_dict(policy_to_dict(pol))
    assert back == pol
    got = back.root.events[0].branches[0][1].belief_floats()
    np.testing.assert_array_equal(got, np.array([0.9, 0.1]))
