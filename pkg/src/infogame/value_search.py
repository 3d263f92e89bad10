"""Search for the informed player's best revelation policy.

A *policy family* is a small parametric chart over belief-split trees.  The
search evaluates family members by solving the backward equation along a
shared simulated bundle (common random numbers, so candidates differ only
through their splits), runs a coarse grid pass, polishes the best point with
Nelder–Mead, and re-confirms the winner on fresh randomness.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import minimize

from .belief_policy import (BeliefPolicy, PolicyNode, SplitEvent,
                            StatePartition, constant_policy, make_node,
                            sample_belief_paths)
from .bsde_solver import BsdeProblem, BsdeSolution, RegressionConfig, solve_backward
from .errors import ValidationError
from .game_model import GameSpec, as_belief
from .hji_solver import ValueGrid
from .sde_engine import PathBundle, TimeGrid, simulate_uncontrolled

Array = np.ndarray

INFEASIBLE_PENALTY = 1e6
_VERTEX_TOL = 1e-12


# ---------------------------------------------------------------------------
# Policy families
# ---------------------------------------------------------------------------


class PolicyFamily(Protocol):
    """Parametric chart over belief policies.

    ``build`` returns None for infeasible parameter points; the search
    penalizes those instead of crashing.
    """

    @property
    def n_params(self) -> int: ...

    @property
    def box(self) -> tuple[tuple[float, float], ...]: ...

    def build(self, params: Array, p: Array,
              grid: TimeGrid) -> BeliefPolicy | None: ...

    def initial_grid(self) -> Array: ...


def _two_point_chart(q: float, a: float, b: float) -> tuple[float, float, float, float]:
    """Two-atom split of a scalar belief q: atoms q + a(1-q) and q(1-b),
    weights pinned by the martingale constraint.  Always feasible on
    [0, 1]^2.  Returns (q_hi, q_lo, weight_hi, weight_lo)."""
    q_hi = q + a * (1.0 - q)
    q_lo = q * (1.0 - b)
    denom = q_hi - q_lo
    if denom <= _VERTEX_TOL:
        return q, q, 1.0, 0.0
    w_hi = (q - q_lo) / denom
    w_lo = (q_hi - q) / denom
    return q_hi, q_lo, w_hi, w_lo


def _split_event_for(q: float, a: float, b: float, time_index: int,
                     make_child) -> SplitEvent | None:
    q_hi, q_lo, w_hi, w_lo = _two_point_chart(q, a, b)
    if q_hi - q_lo <= _VERTEX_TOL or min(w_hi, w_lo) <= _VERTEX_TOL:
        # degenerate chart (vertex prior or one-sided stretch): no real split
        return None
    return SplitEvent(time_index=time_index,
                      branches=((w_hi, make_child(q_hi)),
                                (w_lo, make_child(q_lo))))


@dataclass(frozen=True)
class OneShotFamily:
    """Single two-atom split at a fixed time.

    Parameters (a, b) in [0, 1]^2 stretch the atoms towards the scenario-0
    and scenario-1 vertices; (1, 1) is full revelation, (0, 0) silence.
    Two scenarios only.
    """

    time_index: int = 0
    grid_points: int = 5

    @property
    def n_params(self) -> int:
        return 2

    @property
    def box(self) -> tuple[tuple[float, float], ...]:
        return ((0.0, 1.0), (0.0, 1.0))

    def build(self, params: Array, p: Array,
              grid: TimeGrid) -> BeliefPolicy | None:
        a, b = float(params[0]), float(params[1])
        q = float(p[0])
        event = _split_event_for(q, a, b, self.time_index,
                                 lambda qc: make_node((qc, 1.0 - qc)))
        if event is None:
            return constant_policy(p, grid)
        root = make_node((q, 1.0 - q), events=(event,))
        return BeliefPolicy(root, grid).require_valid()

    def initial_grid(self) -> Array:
        side = np.linspace(0.0, 1.0, self.grid_points)
        aa, bb = np.meshgrid(side, side, indexing="ij")
        return np.column_stack([aa.ravel(), bb.ravel()])


@dataclass(frozen=True)
class TwoStageFamily:
    """Two-atom split at ``first_time`` followed by a second two-atom split
    of each child at ``second_time``, all four stretches free.

    Children that land on a vertex are left alone (nothing remains to
    reveal).  Two scenarios only.
    """

    first_time: int = 0
    second_time: int = 1
    grid_points: int = 3

    def __post_init__(self):
        if not 0 <= self.first_time < self.second_time:
            raise ValidationError(
                "need 0 <= first_time < second_time for a two-stage chart")

    @property
    def n_params(self) -> int:
        return 4

    @property
    def box(self) -> tuple[tuple[float, float], ...]:
        return ((0.0, 1.0),) * 4

    def _leaf_or_second(self, q: float, a1: float, b1: float) -> PolicyNode:
        if q <= _VERTEX_TOL or q >= 1.0 - _VERTEX_TOL:
            return make_node((q, 1.0 - q))
        event = _split_event_for(q, a1, b1, self.second_time,
                                 lambda qc: make_node((qc, 1.0 - qc)))
        if event is None:
            return make_node((q, 1.0 - q))
        return make_node((q, 1.0 - q), events=(event,))

    def build(self, params: Array, p: Array,
              grid: TimeGrid) -> BeliefPolicy | None:
        if self.second_time > grid.n_steps - 1:
            return None
        a0, b0, a1, b1 = (float(s) for s in params)
        q = float(p[0])
        event = _split_event_for(q, a0, b0, self.first_time,
                                 lambda qc: self._leaf_or_second(qc, a1, b1))
        if event is None:
            root = self._leaf_or_second(q, a1, b1)
        else:
            root = make_node((q, 1.0 - q), events=(event,))
        return BeliefPolicy(root, grid).require_valid()

    def initial_grid(self) -> Array:
        side = np.linspace(0.0, 1.0, self.grid_points)
        grids = np.meshgrid(*([side] * 4), indexing="ij")
        return np.column_stack([g.ravel() for g in grids])


@dataclass(frozen=True)
class GatedOneShotFamily:
    """Two-atom split at a fixed time whose stretches depend on the state
    cell the path occupies — one (a, b) pair per cell of the partition.

    Two scenarios only.
    """

    partition: StatePartition
    time_index: int = 1
    samples: int = 24
    seed: int = 7

    @property
    def n_params(self) -> int:
        return 2 * self.partition.n_cells

    @property
    def box(self) -> tuple[tuple[float, float], ...]:
        return ((0.0, 1.0),) * self.n_params

    def build(self, params: Array, p: Array,
              grid: TimeGrid) -> BeliefPolicy | None:
        q = float(p[0])
        events = []
        for cell in range(self.partition.n_cells):
            a, b = float(params[2 * cell]), float(params[2 * cell + 1])
            event = _split_event_for(q, a, b, self.time_index,
                                     lambda qc: make_node((qc, 1.0 - qc)))
            if event is not None:
                events.append(SplitEvent(time_index=event.time_index,
                                         branches=event.branches, cell=cell))
        root = make_node((q, 1.0 - q), events=tuple(events))
        return BeliefPolicy(root, grid, partition=self.partition).require_valid()

    def initial_grid(self) -> Array:
        rng = np.random.default_rng(self.seed)
        pts = rng.uniform(0.0, 1.0, size=(self.samples, self.n_params))
        pts[0] = 0.0
        if self.samples > 1:
            pts[1] = 1.0
        return pts


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    value: float
    se: float
    policy: BeliefPolicy
    solution: BsdeSolution | None = None


def evaluate_policy(spec: GameSpec, policy: BeliefPolicy, x0,
                    m: int, seed: int, bundle: PathBundle | None = None,
                    problem: BsdeProblem | None = None,
                    regression: RegressionConfig | None = None,
                    keep_solution: bool = False) -> EvalResult:
    """Upper-bound value of one revelation policy: solve the backward
    equation along (state paths x policy belief paths).

    Passing ``bundle`` reuses its Brownian paths (common random numbers);
    the belief draws are keyed by ``seed`` and a dedicated stream salt, so
    they are identical across candidates sharing a seed.
    """
    if bundle is None:
        bundle = simulate_uncontrolled(spec, policy.grid.t0, x0, policy.grid,
                                       m, seed)
    if problem is None:
        problem = BsdeProblem.from_game(spec)
    with_beliefs = sample_belief_paths(policy, bundle, seed)
    sol = solve_backward(problem, with_beliefs, regression)
    return EvalResult(value=sol.y0, se=sol.y0_se, policy=policy,
                      solution=sol if keep_solution else None)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


@dataclass
class SearchResult:
    best_value: float
    best_se: float
    best_policy: BeliefPolicy
    best_params: tuple[float, ...] | None     # None when an injected candidate won
    n_evals: int
    history: list[dict] = field(default_factory=list)
    confirmation: dict | None = None
    seed: int = 0
    game: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "game": self.game,
            "best_value": self.best_value,
            "best_se": self.best_se,
            "best_params": (list(self.best_params)
                            if self.best_params is not None else None),
            "n_evals": self.n_evals,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "confirmation": self.confirmation,
            "history": self.history,
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def minimize_over_policies(spec: GameSpec, family: PolicyFamily, p, x0,
                           grid: TimeGrid, m: int, seed: int,
                           budget: int = 500,
                           extra_candidates: Sequence[BeliefPolicy] = (),
                           regression: RegressionConfig | None = None,
                           polish: bool = True,
                           confirm_seed: int | None = None) -> SearchResult:
    """Minimize the policy value over a family chart.

    One uncontrolled bundle is simulated up front and shared by every
    candidate; ``budget`` caps the total number of backward solves.  The
    reported best value is the recorded evaluation of the winning candidate
    on the shared bundle (never a re-evaluation), plus an optional
    fresh-seed confirmation run.
    """
    if budget < 1:
        raise ValidationError("search budget must be positive")
    start = _time.monotonic()
    p = as_belief(p, spec.n_scenarios)
    bundle = simulate_uncontrolled(spec, grid.t0, x0, grid, m, seed)
    problem = BsdeProblem.from_game(spec)

    history: list[dict] = []
    cache: dict[tuple, float] = {}
    best: dict = {"value": np.inf, "policy": None, "params": None, "se": np.nan}
    evals = 0

    def run(policy: BeliefPolicy, params, source: str) -> float:
        nonlocal evals
        res = evaluate_policy(spec, policy, x0, m, seed, bundle=bundle,
                              problem=problem, regression=regression)
        evals += 1
        entry = {"source": source, "value": res.value, "se": res.se,
                 "params": None if params is None else
                 [float(s) for s in params]}
        history.append(entry)
        if res.value < best["value"]:
            best.update(value=res.value, policy=policy, se=res.se,
                        params=None if params is None else
                        tuple(float(s) for s in params))
        return res.value

    def objective(params: Array, source: str) -> float:
        key = tuple(np.round(np.asarray(params, dtype=float), 12))
        if key in cache:
            return cache[key]
        if evals >= budget:
            cache[key] = INFEASIBLE_PENALTY
            return INFEASIBLE_PENALTY
        policy = family.build(np.asarray(params, dtype=float), p, grid)
        if policy is None:
            val = INFEASIBLE_PENALTY + float(np.abs(params).sum())
        else:
            val = run(policy, params, source)
        cache[key] = val
        return val

    for point in family.initial_grid():
        if evals >= budget:
            break
        objective(point, "grid")

    for cand in extra_candidates:
        if evals >= budget:
            break
        run(cand, None, "extra")

    if polish and evals < budget and best["params"] is not None:
        x_start = np.asarray(best["params"], dtype=float)
        minimize(lambda s: objective(s, "polish"), x_start,
                 method="Nelder-Mead", bounds=family.box,
                 options={"maxfev": max(1, budget - evals),
                          "xatol": 1e-3, "fatol": 1e-5, "disp": False})

    if best["policy"] is None:
        raise ValidationError("search evaluated no feasible candidate")

    confirmation = None
    if confirm_seed is not None:
        fresh = evaluate_policy(spec, best["policy"], x0, m, confirm_seed,
                                problem=problem, regression=regression)
        confirmation = {"seed": confirm_seed, "value": fresh.value,
                        "se": fresh.se}

    return SearchResult(best_value=float(best["value"]),
                        best_se=float(best["se"]),
                        best_policy=best["policy"],
                        best_params=best["params"],
                        n_evals=evals, history=history,
                        confirmation=confirmation, seed=seed,
                        game=spec.name,
                        wall_time=_time.monotonic() - start)


def merge_one_shot(policies: Sequence[BeliefPolicy], p,
                   grid: TimeGrid) -> BeliefPolicy:
    """Composite one-shot candidate: pool the time-0 atoms of several
    one-shot policies into a single split, rescaling weights uniformly.

    The pooled measure still averages to the prior, so the composite is a
    valid revelation policy; the search injects it to stress convexity of
    the value in the revelation measure.
    """
    if not policies:
        raise ValidationError("nothing to merge")
    p = as_belief(p)
    branches: list[tuple[float, PolicyNode]] = []
    share = 1.0 / len(policies)
    for pol in policies:
        events = [e for e in pol.root.events if e.time_index == 0]
        if not events:
            branches.append((share, make_node(pol.root.belief)))
            continue
        if len(events) != 1 or events[0].cell is not None:
            raise ValidationError("merge_one_shot needs ungated one-shot roots")
        for weight, child in events[0].branches:
            branches.append((share * float(weight), make_node(child.belief)))
    root = make_node(tuple(p), events=(
        SplitEvent(time_index=0, branches=tuple(branches)),))
    return BeliefPolicy(root, grid).require_valid()


# ---------------------------------------------------------------------------
# Dynamic-programming consistency
# ---------------------------------------------------------------------------


@dataclass
class DppReport:
    value: float          # backward solve at the start
    rollup: float         # E[int_0^mid driver + grid value at mid]
    residual: float
    rollup_se: float
    t_mid: float
    k_mid: int

    @property
    def consistent_within(self) -> float:
        """Smallest c such that residual <= c * rollup_se (inf when se=0)."""
        if self.rollup_se == 0:
            return float("inf") if self.residual > 0 else 0.0
        return self.residual / self.rollup_se


def dpp_residual(spec: GameSpec, policy: BeliefPolicy, reference: ValueGrid,
                 x0, m: int, seed: int, t_mid: float,
                 regression: RegressionConfig | None = None) -> DppReport:
    """Check the two-stage consistency of the backward solve against a grid
    value: integrate the driver to ``t_mid`` along solved paths and restart
    from the grid value there; the result should reproduce the one-shot
    value up to Monte Carlo noise and grid bias.

    The restart belief is the left limit at ``t_mid`` — a split scheduled
    exactly at the restart time belongs to the continuation the grid value
    already optimizes over, so it must not move the belief argument.  At
    ``t_mid = t0`` the window is empty and both sides collapse to the grid
    value at the start: the residual is zero by construction and only
    anchors the convention.
    """
    grid = policy.grid
    k_mid = int(round((t_mid - grid.t0) / grid.dt))
    if not 0 <= k_mid <= grid.n_steps:
        raise ValidationError(f"t_mid={t_mid} does not fall inside the grid")
    t_snap = grid.node(k_mid)
    if k_mid == 0:
        w0 = float(reference.interp(t_snap, float(np.asarray(x0).reshape(-1)[0]),
                                    float(policy.root.belief_floats()[0])))
        return DppReport(value=w0, rollup=w0, residual=0.0, rollup_se=0.0,
                         t_mid=float(t_snap), k_mid=0)
    bundle = simulate_uncontrolled(spec, grid.t0, x0, grid, m, seed)
    problem = BsdeProblem.from_game(spec)
    with_beliefs = sample_belief_paths(policy, bundle, seed)
    sol = solve_backward(problem, with_beliefs, regression)

    run = np.zeros(m)
    for k in range(k_mid):
        run += sol.driver_values[:, k] * grid.dt
    p_left = with_beliefs.beliefs[:, k_mid - 1]
    if k_mid == grid.n_steps:
        tail = np.asarray(problem.terminal(with_beliefs.X[:, k_mid], p_left))
    else:
        tail = reference.interp_belief(t_snap, with_beliefs.X[:, k_mid, 0],
                                       p_left)
    samples = run + tail
    rollup = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(m))
    return DppReport(value=sol.y0, rollup=rollup,
                     residual=abs(sol.y0 - rollup), rollup_se=se,
                     t_mid=float(t_snap), k_mid=k_mid)
