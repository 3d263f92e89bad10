"""Closed-loop play: extracted feedback controls against test opponents.

The grid solution is turned into a feedback table (nearest-node lookup of
the exact grid min-max at the interpolated spatial slope), the revelation
policy is sampled step by step alongside the controlled state, and the
realized payoff is scored per scenario.  A reweighting route based on the
drift change-of-measure gives a second, independent estimate of the same
number; the two must agree within Monte Carlo noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .belief_policy import BeliefPolicy, BeliefSampler, sample_belief_paths
from .errors import ValidationError
from .game_model import GameSpec, argminmax_batch, as_belief
from .hji_solver import ObstacleSolution, ValueGrid, nonrevealing_step_residual
from .sde_engine import (SALT_OPPONENT, TimeGrid, brownian_increments,
                         girsanov_weight, grouped_costs, grouped_drift,
                         resolve_controls, sample_sigma_step,
                         simulate_uncontrolled, uniform_draws)

Array = np.ndarray


def _nearest(axis: Array, vals: Array) -> Array:
    """Index of the nearest grid node, ties to the left."""
    j = np.clip(np.searchsorted(axis, vals), 1, len(axis) - 1)
    left = axis[j - 1]
    right = axis[j]
    return np.where(vals - left <= right - vals, j - 1, j)


# ---------------------------------------------------------------------------
# Feedback extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategyTable:
    """Optimal feedback controls tabulated on the value grid.

    ``iu[k, j, r]`` / ``iv[k, j, r]`` are grid indices of the exact min-max
    pair at time node k, state node j, belief node r, computed from the
    central-difference spatial slope of the value (one-sided at the domain
    edges).  Queries snap to the nearest node in each axis.
    """

    t: Array      # (nt,) control-time nodes (final time excluded)
    x: Array      # (nx,)
    q: Array      # (np,)
    iu: Array     # (nt, nx, np) int64
    iv: Array     # (nt, nx, np) int64

    def controls_at(self, t: float, x: Array, q: Array) -> tuple[Array, Array]:
        kt = int(_nearest(self.t, np.asarray([t]))[0])
        jx = _nearest(self.x, np.asarray(x, dtype=float).reshape(-1))
        if len(self.q) == 1:
            jq = np.zeros(len(jx), dtype=np.int64)
        else:
            jq = _nearest(self.q, np.asarray(q, dtype=float).reshape(-1))
        return self.iu[kt, jx, jq], self.iv[kt, jx, jq]

    def informed_control(self) -> Callable:
        """Feedback callable for the control resolver (needs beliefs)."""

        def control(k, t, x, beliefs):
            if beliefs is None and len(self.q) > 1:
                raise ValidationError("informed feedback needs belief paths")
            qq = None if beliefs is None else beliefs[:, 0]
            return self.controls_at(t, x[:, 0], qq)[0]

        return control

    def uninformed_control(self) -> Callable:
        """The tabulated best reply; the belief path is public (splits are
        announced), so the reply may depend on it."""

        def control(k, t, x, beliefs):
            qq = None if beliefs is None else beliefs[:, 0]
            return self.controls_at(t, x[:, 0], qq)[1]

        return control


def extract_strategy(spec: GameSpec, value: ValueGrid) -> StrategyTable:
    """Tabulate the min-max feedback pair from a solved value grid."""
    if spec.d != 1:
        raise ValidationError("feedback extraction needs scalar state")
    nt = len(value.t) - 1
    nx, n_p = len(value.x), len(value.p)
    iu = np.empty((nt, nx, n_p), dtype=np.int64)
    iv = np.empty((nt, nx, n_p), dtype=np.int64)
    x_flat = np.repeat(value.x, n_p).reshape(-1, 1)
    if spec.n_scenarios == 2 and n_p >= 1:
        beliefs = np.column_stack([value.p, 1.0 - value.p])
    else:
        raise ValidationError("feedback extraction handles two scenarios")
    p_flat = np.tile(beliefs, (nx, 1))
    for k in range(nt):
        slope = np.gradient(value.w[k], value.x, axis=0)
        xi_flat = slope.reshape(-1, 1)
        a, b = argminmax_batch(spec, float(value.t[k]), x_flat, xi_flat, p_flat)
        iu[k] = a.reshape(nx, n_p)
        iv[k] = b.reshape(nx, n_p)
    return StrategyTable(t=value.t[:-1].copy(), x=value.x.copy(),
                         q=value.p.copy(), iu=iu, iv=iv)


# ---------------------------------------------------------------------------
# Opponents
# ---------------------------------------------------------------------------


class MirrorOpponent:
    """Copies the informed player's concurrent grid index (clipped)."""


OPPONENT_FORMS = ("constant:<j>", "random:<seed>", "myopic-max", "mirror",
                  "alternate", "table")


def make_opponent(spec: GameSpec, name: str, grid: TimeGrid, m: int,
                  prior, strategy: StrategyTable | None = None):
    """Build a control description for the maximizing player.

    Forms: ``constant:<j>`` (fixed grid index), ``random:<seed>`` (iid
    uniform indices from a dedicated stream), ``myopic-max`` (static game
    best reply at the prior, zero slope), ``mirror`` (copies the opponent's
    index), ``alternate`` (cycles the grid), ``table`` (tabulated best reply
    from a solved grid; needs ``strategy``).
    """
    nv = len(spec.v_grid)
    prior = as_belief(prior, spec.n_scenarios)
    if name.startswith("constant:"):
        j = int(name.split(":", 1)[1])
        if not 0 <= j < nv:
            raise ValidationError(f"constant opponent index {j} out of range")
        return j
    if name.startswith("random:"):
        opp_seed = int(name.split(":", 1)[1])
        u = uniform_draws(grid, m, opp_seed, slots=1,
                          salt=SALT_OPPONENT)[:, :grid.n_steps, 0]
        return np.minimum((u * nv).astype(np.int64), nv - 1)
    if name == "myopic-max":
        def myopic(k, t, x, beliefs):
            zeros = np.zeros((x.shape[0], spec.d))
            p = np.broadcast_to(prior, (x.shape[0], spec.n_scenarios))
            return argminmax_batch(spec, t, x, zeros, p)[1]
        return myopic
    if name == "mirror":
        return MirrorOpponent()
    if name == "alternate":
        return np.arange(grid.n_steps, dtype=np.int64) % nv
    if name == "table":
        if strategy is None:
            raise ValidationError("'table' opponent needs a strategy table")
        return strategy.uninformed_control()
    raise ValidationError(
        f"unknown opponent '{name}'; known forms: {', '.join(OPPONENT_FORMS)}")


# ---------------------------------------------------------------------------
# Closed-loop play
# ---------------------------------------------------------------------------


@dataclass
class ScenarioScore:
    scenario: int
    prior: float
    count: int
    mean: float       # conditional mean estimate, prior-normalized
    se: float


@dataclass
class PlayReport:
    aggregate: float
    aggregate_se: float
    per_scenario: list[ScenarioScore]
    opponent: str
    seed: int
    m: int
    reference_value: float | None = None
    gap: float | None = None
    control_usage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "aggregate_se": self.aggregate_se,
            "opponent": self.opponent,
            "seed": self.seed,
            "m": self.m,
            "reference_value": self.reference_value,
            "gap": self.gap,
            "control_usage": self.control_usage,
            "per_scenario": [vars(s) for s in self.per_scenario],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _grouped_payoffs(spec: GameSpec, x_T: Array, scen: Array) -> Array:
    out = np.empty(x_T.shape[0])
    for i in range(spec.n_scenarios):
        mask = scen == i
        if mask.any():
            out[mask] = np.asarray(spec.payoffs[i](x_T[mask]),
                                   dtype=float).reshape(-1)
    return out


def _score(spec: GameSpec, payoff: Array, scen: Array, prior: Array,
           m: int) -> tuple[float, float, list[ScenarioScore]]:
    per: list[ScenarioScore] = []
    for i in range(spec.n_scenarios):
        p_i = float(prior[i])
        mask = scen == i
        if p_i <= 0.0:
            per.append(ScenarioScore(i, p_i, int(mask.sum()), float("nan"),
                                     float("nan")))
            continue
        # transformed samples payoff * 1{scenario=i} / p_i: their mean is the
        # conditional estimate and the prior-weighted sum of those means is,
        # identically, the plain average of the payoffs
        y = np.where(mask, payoff, 0.0) / p_i
        per.append(ScenarioScore(i, p_i, int(mask.sum()), float(y.mean()),
                                 float(y.std(ddof=1) / np.sqrt(m))))
    aggregate = float(payoff.mean())
    agg_se = float(payoff.std(ddof=1) / np.sqrt(m))
    return aggregate, agg_se, per


def simulate_play(spec: GameSpec, strategy: StrategyTable,
                  policy: BeliefPolicy, x0, m: int, seed: int,
                  opponent: str = "myopic-max",
                  reference: ValueGrid | None = None) -> PlayReport:
    """Play the informed feedback + revelation policy against an opponent.

    Per step: reveal (sample the policy's events at the current state), look
    up both controls, advance the state.  At the horizon the policy's
    terminal rule draws the scenario from the final belief; the payoff is the
    scenario's accumulated running cost plus its terminal payoff.

    The scenario-conditional estimates are normalized by the prior, so their
    prior-weighted sum equals the plain payoff average exactly.
    """
    grid = policy.grid
    n = grid.n_steps
    prior = policy.root.belief_floats()
    dB = brownian_increments(grid, m, spec.d, seed)
    sampler = BeliefSampler(policy, m, seed)
    opp = make_opponent(spec, opponent, grid, m, prior, strategy)

    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(spec.d),
                        (m, spec.d)).copy()
    acc = np.zeros((m, spec.n_scenarios))
    usage = np.zeros(len(spec.u_grid), dtype=np.int64)
    informed = strategy.informed_control()
    for k in range(n):
        t = grid.node(k)
        beliefs_k, _ = sampler.step(k, x)
        iu = resolve_controls(informed, k, t, x, beliefs_k,
                              len(spec.u_grid), m)
        if isinstance(opp, MirrorOpponent):
            iv = np.minimum(iu, len(spec.v_grid) - 1)
        else:
            iv = resolve_controls(opp, k, t, x, beliefs_k,
                                  len(spec.v_grid), m)
        usage += np.bincount(iu, minlength=len(spec.u_grid))
        acc += grouped_costs(spec, t, x, iu, iv) * grid.dt
        b = grouped_drift(spec, t, x, iu, iv)
        x = x + b * grid.dt + sample_sigma_step(spec, t, x, dB[:, k])
    _, nodes_T = sampler.step(n, x)
    scen = nodes_T - policy.n_nodes
    if scen.min() < 0 or scen.max() >= spec.n_scenarios:
        raise ValidationError(
            "terminal sampling did not produce scenario labels; the policy "
            "must keep its terminal rule enabled for play")
    payoff = acc[np.arange(m), scen] + _grouped_payoffs(spec, x, scen)
    aggregate, agg_se, per = _score(spec, payoff, scen, prior, m)

    ref_val = gap = None
    if reference is not None:
        ref_val = float(reference.interp(grid.t0, float(x0), float(prior[0])))
        gap = aggregate - ref_val
    usage_frac = {str(spec.u_grid[i]): float(usage[i] / max(usage.sum(), 1))
                  for i in range(len(spec.u_grid))}
    return PlayReport(aggregate=aggregate, aggregate_se=agg_se,
                      per_scenario=per, opponent=opponent, seed=seed, m=m,
                      reference_value=ref_val, gap=gap,
                      control_usage=usage_frac)


def reweighted_play(spec: GameSpec, strategy: StrategyTable,
                    policy: BeliefPolicy, x0, m: int, seed: int,
                    opponent: str = "myopic-max") -> PlayReport:
    """Same quantity through the change-of-drift route: simulate drift-free
    paths, resolve the very same feedback controls along them, and reweight
    the scored payoff.  Agreement with :func:`simulate_play` within noise is
    evidence both the integrator and the weights are right.
    """
    grid = policy.grid
    n = grid.n_steps
    prior = policy.root.belief_floats()
    bundle = simulate_uncontrolled(spec, grid.t0, x0, grid, m, seed)
    with_beliefs = sample_belief_paths(policy, bundle, seed)
    opp = make_opponent(spec, opponent, grid, m, prior, strategy)
    informed = strategy.informed_control()

    acc = np.zeros((m, spec.n_scenarios))
    iu_all = np.empty((m, n), dtype=np.int64)
    iv_all = np.empty((m, n), dtype=np.int64)
    for k in range(n):
        t = grid.node(k)
        x_k = with_beliefs.X[:, k]
        p_k = with_beliefs.beliefs[:, k]
        iu = resolve_controls(informed, k, t, x_k, p_k, len(spec.u_grid), m)
        if isinstance(opp, MirrorOpponent):
            iv = np.minimum(iu, len(spec.v_grid) - 1)
        else:
            iv = resolve_controls(opp, k, t, x_k, p_k, len(spec.v_grid), m)
        iu_all[:, k], iv_all[:, k] = iu, iv
        acc += grouped_costs(spec, t, x_k, iu, iv) * grid.dt
    gw = girsanov_weight(spec, with_beliefs, iu_all, iv_all)
    scen = with_beliefs.belief_nodes[:, n] - policy.n_nodes
    x_T = with_beliefs.X[:, n]
    payoff = (acc[np.arange(m), scen] + _grouped_payoffs(spec, x_T, scen))
    weighted = gw.weights * payoff
    aggregate, agg_se, per = _score(spec, weighted, scen, prior, m)
    report = PlayReport(aggregate=aggregate, aggregate_se=agg_se,
                        per_scenario=per, opponent=opponent, seed=seed, m=m)
    report.control_usage = {"girsanov_clip_count": gw.clip_count}
    return report


# ---------------------------------------------------------------------------
# Optimality certificates
# ---------------------------------------------------------------------------


@dataclass
class SufficiencyReport:
    """Certificate that a revelation policy is consistent with the grid
    solution: beliefs dwell where the free equation holds, jumps move along
    flat directions of the value, and the belief path is piecewise constant.
    """

    max_interior_residual: float
    interior_tol: float
    max_jump_misalign: float
    jump_tol: float
    n_jumping_paths: int
    piecewise_constant: bool
    passed: bool

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] interior residual {self.max_interior_residual:.3e} "
                f"(tol {self.interior_tol:.1e}), jump misalignment "
                f"{self.max_jump_misalign:.3e} (tol {self.jump_tol:.1e}), "
                f"{self.n_jumping_paths} jumping paths, piecewise-constant="
                f"{self.piecewise_constant}")


def verify_sufficiency(spec: GameSpec, solution: ObstacleSolution,
                       policy: BeliefPolicy, x0, m: int, seed: int,
                       interior_tol: float = 1e-6,
                       jump_tol: float = 1e-3) -> SufficiencyReport:
    """Check the two first-order conditions for a revelation policy against
    an obstacle solve.

    (i) at the beliefs actually held between jumps, the projection residual
    of the grid scheme (obstacle displacement per unit time) interpolates to
    at most ``interior_tol``; (ii) every belief jump moves along a direction
    where the value is affine, within ``jump_tol``; (iii) beliefs only move
    when the split tree says so.
    """
    vg = solution.value
    grid = policy.grid
    bundle = simulate_uncontrolled(spec, grid.t0, x0, grid, m, seed)
    wb = sample_belief_paths(policy, bundle, seed)
    beliefs, nodes = wb.beliefs, wb.belief_nodes
    n = grid.n_steps
    n_pde = len(vg.t) - 1

    residual_cache: dict[int, RegularGridInterpolator] = {}

    def residual_at(s: int) -> RegularGridInterpolator:
        if s not in residual_cache:
            r = nonrevealing_step_residual(spec, solution, s)
            residual_cache[s] = RegularGridInterpolator(
                (vg.x, vg.p), r, bounds_error=False, fill_value=None)
        return residual_cache[s]

    max_interior = 0.0
    for k in range(n):
        t_k = grid.node(k)
        s = int(np.clip(round((t_k - vg.t[0]) / solution.dt), 0, n_pde - 1))
        pts = np.column_stack([
            np.clip(wb.X[:, k, 0], vg.x[0], vg.x[-1]),
            np.clip(beliefs[:, k, 0], vg.p[0], vg.p[-1])])
        vals = residual_at(s)(pts)
        max_interior = max(max_interior, float(np.abs(vals).max()))

    # jump alignment, including the terminal scenario draw
    dq_grid = vg.p[1] - vg.p[0] if len(vg.p) > 1 else 1.0
    max_misalign = 0.0
    jumping = np.zeros(m, dtype=bool)
    root_q = float(policy.root.belief_floats()[0])
    for k in range(n + 1):
        t_k = grid.node(k)
        if k == 0:
            q_pre = np.full(m, root_q)
        else:
            q_pre = beliefs[:, k - 1, 0]
        if k == n:
            q_post = vg.p[-1] * (nodes[:, n] == policy.vertex_node_id(0)) \
                + vg.p[0] * (nodes[:, n] == policy.vertex_node_id(1))
            q_post = np.asarray(q_post, dtype=float)
        else:
            q_post = beliefs[:, k, 0]
        moved = np.abs(q_post - q_pre) > 1e-14
        if not moved.any():
            continue
        jumping |= moved
        idx = np.nonzero(moved)[0]
        x_k = wb.X[idx, k, 0]
        h = dq_grid
        lo = np.clip(q_pre[idx] - h, 0.0, 1.0)
        hi = np.clip(q_pre[idx] + h, 0.0, 1.0)
        w_lo = vg.interp(t_k, x_k, lo)
        w_hi = vg.interp(t_k, x_k, hi)
        slope = (w_hi - w_lo) / np.maximum(hi - lo, 1e-300)
        w_pre = vg.interp(t_k, x_k, q_pre[idx])
        w_post = vg.interp(t_k, x_k, q_post[idx])
        misalign = np.abs(w_post - w_pre - slope * (q_post[idx] - q_pre[idx]))
        max_misalign = max(max_misalign, float(misalign.max()))

    piecewise = True
    for k in range(1, n + 1):
        same = nodes[:, k] == nodes[:, k - 1]
        if same.any():
            if np.abs(beliefs[same, k] - beliefs[same, k - 1]).max() > 0:
                piecewise = False
                break

    passed = (max_interior <= interior_tol and max_misalign <= jump_tol
              and piecewise)
    return SufficiencyReport(max_interior_residual=max_interior,
                             interior_tol=interior_tol,
                             max_jump_misalign=max_misalign,
                             jump_tol=jump_tol,
                             n_jumping_paths=int(jumping.sum()),
                             piecewise_constant=piecewise, passed=passed)
