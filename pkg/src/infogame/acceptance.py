"""Acceptance criteria for the solver suite, runnable as a batch.

Each criterion is a self-contained check with pinned tolerances; the
functions return a :class:`CriterionResult` whose ``line()`` is a one-line
pass/fail verdict.  ``run_all`` executes every criterion in order and is
what both the test-suite and the command line ``check`` subcommand call.

Heavy intermediates (grid solves, policy searches) are cached on the shared
:class:`AcceptanceContext`, so criteria that reuse the same solve do not pay
for it twice.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .belief_policy import (BeliefPolicy, SplitEvent, constant_policy,
                            make_node, one_shot_split, policy_from_dict,
                            policy_to_dict)
from .bsde_solver import (BsdeProblem, RegressionConfig, comparison_check,
                          solve_backward, solve_picard)
from .errors import InfogameError
from .gallery import gallery_game
from .game_model import vertex_belief
from .hji_solver import (ObstacleSolution, ValueGrid, complete_info_solve,
                         solve_obstacle_hji)
from .play_harness import extract_strategy, simulate_play
from .sde_engine import TimeGrid, simulate_uncontrolled
from .value_search import (OneShotFamily, SearchResult, dpp_residual,
                           evaluate_policy, merge_one_shot,
                           minimize_over_policies)

Array = np.ndarray


def _seed_for(*parts) -> int:
    """Stable seed derived from the cache key, so repeated runs and cache
    hits see identical randomness."""
    return zlib.crc32(repr(parts).encode()) & 0x7FFFFFFF


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    details: str
    elapsed: float
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.index:2d} [{self.name}] {verdict} "
                f"({self.elapsed:.1f}s): {self.details}")


class AcceptanceContext:
    """Shared solves and searches for the acceptance batch.

    ``fast=True`` shrinks path counts and budgets by roughly an order of
    magnitude for smoke runs; the pinned tolerances themselves never change.
    """

    def __init__(self, fast: bool = False):
        self.fast = fast
        self.coupled = gallery_game("coupled-B")
        self._cache: dict = {}
        # resolution knobs
        self.m_c1 = 20_000 if fast else 100_000
        self.n_c1 = 32 if fast else 64
        self.c2_pairs = 20 if fast else 100
        # search budgets must cover the one-shot family's own initial grid
        # (25 points at grid_points=5, 16 at grid_points=4) plus injected
        # candidates, or the smoke run hands every downstream criterion a
        # truncated-enumeration winner and fails on resolution, not substance
        self.m_search = 4_000 if fast else 20_000
        self.budget_probe = 30 if fast else 60
        self.m_small = 2_000 if fast else 10_000
        self.budget_small = 20 if fast else 30
        self.m_play = 4_000 if fast else 20_000
        self.nx = 121 if fast else 201
        self.n_p = 31 if fast else 51
        self.c5_triples = 4 if fast else 20
        self.c6_splits = 2 if fast else 10

    # -- cached solves ------------------------------------------------------

    def obstacle(self) -> ObstacleSolution:
        key = ("obstacle", self.nx, self.n_p)
        if key not in self._cache:
            self._cache[key] = solve_obstacle_hji(
                self.coupled, nx=self.nx, n_p=self.n_p, store_activity=True)
        return self._cache[key]

    def complete(self, scenario: int) -> ValueGrid:
        key = ("complete", scenario, self.nx)
        if key not in self._cache:
            self._cache[key] = complete_info_solve(self.coupled, scenario,
                                                   nx=self.nx)
        return self._cache[key]

    def search(self, t0: float, x0: float, q: float, m: int, budget: int,
               n_steps: int = 32, grid_points: int = 5) -> SearchResult:
        key = ("search", t0, x0, round(q, 10), m, budget, n_steps, grid_points)
        if key not in self._cache:
            grid = TimeGrid(t0, self.coupled.horizon, n_steps)
            self._cache[key] = minimize_over_policies(
                self.coupled, OneShotFamily(grid_points=grid_points),
                (q, 1.0 - q), x0, grid, m, seed=_seed_for(key),
                budget=budget)
        return self._cache[key]


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1(ctx: AcceptanceContext) -> CriterionResult:
    """Closed-form backward values: zero driver keeps the start value at the
    terminal mean; constant drivers shift it by exactly (T - t0) times the
    constant.  Tolerance 3 standard errors + 2 dt per case."""
    start = time.monotonic()
    spec = gallery_game("driftless-C")
    grid = TimeGrid(0.0, 1.0, ctx.n_c1)
    x0 = 0.3
    bundle = simulate_uncontrolled(spec, 0.0, x0, grid, ctx.m_c1,
                                   seed=_seed_for("c1"))
    from .belief_policy import sample_belief_paths
    policy = constant_policy((0.5, 0.5), grid)
    wb = sample_belief_paths(policy, bundle, seed=_seed_for("c1-beliefs"))

    cases = [
        ("martingale", 0.0, x0),
        ("unit drift", 1.0, x0 + 1.0),
        ("scaled drift", 0.7, x0 + 0.7),
    ]
    errs = []
    ok = True
    for label, c, expect in cases:
        problem = BsdeProblem(
            driver=lambda t, x, z, p, c=c: np.full(x.shape[0], c),
            terminal=lambda x, p: x[:, 0], z_lipschitz=None,
            name=f"closed:{label}")
        sol = solve_backward(problem, wb)
        tol = 3.0 * sol.y0_se + 2.0 * grid.dt
        err = abs(sol.y0 - expect)
        errs.append((label, err, tol))
        ok &= err <= tol
    elapsed = time.monotonic() - start
    worst = max(errs, key=lambda e: e[1] / e[2])
    details = (f"3 closed forms on m={ctx.m_c1}, worst |err|={worst[1]:.2e} "
               f"vs tol {worst[2]:.2e} ({worst[0]})")
    return CriterionResult(1, "closed-form backward values", ok, details,
                           elapsed, {"cases": [(l, e, t) for l, e, t in errs]})


def criterion_2(ctx: AcceptanceContext) -> CriterionResult:
    """Pathwise comparison: for ordered driver/terminal pairs the backward
    solve never inverts the order at any (path, step); violations below
    -1e-9 count as failures.  The construction keeps the driver slope c and
    the realized increments inside the regime where order preservation is a
    theorem for the cell-averaging scheme, and that precondition is checked
    on the realized draw, not assumed."""
    start = time.monotonic()
    spec = gallery_game("driftless-C")
    grid = TimeGrid(0.0, 1.0, 32)
    bundle = simulate_uncontrolled(spec, 0.0, 0.0, grid, 2000,
                                   seed=_seed_for("c2"))
    from .belief_policy import sample_belief_paths
    policy = constant_policy((0.5, 0.5), grid)
    wb = sample_belief_paths(policy, bundle, seed=_seed_for("c2-beliefs"))

    db_amp = float(np.abs(wb.dB).max())
    rng = np.random.default_rng(_seed_for("c2-pairs"))
    n_viol = 0
    worst_gap = np.inf
    precondition_ok = True
    for _ in range(ctx.c2_pairs):
        c = float(rng.uniform(0.05, 0.4))
        sgn = float(rng.choice([-1.0, 1.0]))
        shift_f = float(rng.uniform(0.0, 1.0))
        shift_g = float(rng.uniform(0.0, 0.5))
        a = float(rng.uniform(0.5, 2.0))
        precondition_ok &= c * 2.0 * db_amp < 1.0

        def f_lo(t, x, z, p, c=c, sgn=sgn):
            return c * sgn * z[:, 0]

        def f_hi(t, x, z, p, c=c, sgn=sgn, s=shift_f):
            return c * sgn * z[:, 0] + s

        lo = BsdeProblem(driver=f_lo,
                         terminal=lambda x, p, a=a: np.tanh(a * x[:, 0]),
                         z_lipschitz=c)
        hi = BsdeProblem(driver=f_hi,
                         terminal=lambda x, p, a=a, s=shift_g:
                         np.tanh(a * x[:, 0]) + s,
                         z_lipschitz=c)
        sol_lo = solve_backward(lo, wb)
        sol_hi = solve_backward(hi, wb)
        rep = comparison_check(sol_hi, sol_lo)
        n_viol += rep.n_violations
        worst_gap = min(worst_gap, rep.min_gap)
    ok = n_viol == 0 and precondition_ok
    elapsed = time.monotonic() - start
    details = (f"{ctx.c2_pairs} ordered pairs, {n_viol} violations < -1e-9, "
               f"min gap {worst_gap:.2e}, slope precondition "
               f"{'holds' if precondition_ok else 'FAILS'} "
               f"(c*2*max|dB|={0.4 * 2 * db_amp:.2f})")
    return CriterionResult(2, "pathwise comparison ordering", ok, details,
                           elapsed, {"n_violations": n_viol,
                                     "min_gap": worst_gap})


def _c3_probes(ctx: AcceptanceContext):
    if ctx.fast:
        return [(0.0, 0.0, 0.5), (0.0, 1.0, 0.25)]
    return [(t0, x0, q)
            for t0 in (0.0, 0.5)
            for x0 in (-1.0, 0.0, 1.0)
            for q in (0.25, 0.5, 0.75)]


def criterion_3(ctx: AcceptanceContext) -> CriterionResult:
    """Cross-validation of the two value routes: at every probe point the
    grid solve and the policy-search value agree within 0.05."""
    start = time.monotonic()
    obs = ctx.obstacle()
    errs = []
    n_evals = 0
    for (t0, x0, q) in _c3_probes(ctx):
        res = ctx.search(t0, x0, q, ctx.m_search, ctx.budget_probe)
        w_ref = float(obs.value.interp(t0, x0, q))
        errs.append(abs(res.best_value - w_ref))
        n_evals += res.n_evals
    worst = max(errs)
    ok = worst <= 0.05
    elapsed = time.monotonic() - start
    details = (f"{len(errs)} probes, max |grid - search| = {worst:.4f} "
               f"(tol 0.05), {n_evals} policy evaluations total")
    return CriterionResult(3, "grid vs search cross-validation", ok, details,
                           elapsed, {"errors": errs})


def criterion_4(ctx: AcceptanceContext) -> CriterionResult:
    """Vertex consistency: the obstacle solve restricted to a belief vertex
    equals the complete-information solve to 1e-10 (the kernels are
    floating-point identical), and the path-space value started from a
    vertex prior matches it within 3 SE + 0.02."""
    start = time.monotonic()
    obs = ctx.obstacle()
    spec = ctx.coupled
    grid_diffs = []
    bsde_diffs = []
    ok = True
    for scenario, col in ((0, -1), (1, 0)):
        ref = ctx.complete(scenario)
        d = float(np.abs(obs.value.w[:, :, col] - ref.w[:, :, 0]).max())
        grid_diffs.append(d)
        ok &= d <= 1e-10
        policy = constant_policy(tuple(vertex_belief(scenario, 2)),
                                 TimeGrid(0.0, 1.0, 32))
        res = evaluate_policy(spec, policy, 0.0, ctx.m_search,
                              _seed_for("c4", scenario))
        w0 = float(ref.interp(0.0, 0.0, ref.p[0]))
        diff = abs(res.value - w0)
        tol = 3.0 * res.se + 0.02
        bsde_diffs.append((diff, tol))
        ok &= diff <= tol
    elapsed = time.monotonic() - start
    details = (f"grid vertex gaps {grid_diffs[0]:.1e}/{grid_diffs[1]:.1e} "
               f"(tol 1e-10); path-space gaps "
               + "/".join(f"{d:.3f}<=({t:.3f})" for d, t in bsde_diffs))
    return CriterionResult(4, "vertex consistency", ok, details, elapsed,
                           {"grid": grid_diffs, "bsde": bsde_diffs})


def criterion_5(ctx: AcceptanceContext) -> CriterionResult:
    """Convexity in the belief: grid second differences along the belief
    axis stay above -1e-10, and searched values at midpoint priors sit below
    the average of endpoint values within twice the combined noise (the
    midpoint search is seeded with the pooled endpoint winner, so this is a
    property of the recorded numbers, not luck)."""
    start = time.monotonic()
    obs = ctx.obstacle()
    w = obs.value.w
    second = w[:, :, 2:] - 2.0 * w[:, :, 1:-1] + w[:, :, :-2]
    min_second = float(second.min())
    grid_ok = min_second >= -1e-10

    rng = np.random.default_rng(_seed_for("c5"))
    failures = 0
    margins = []
    grid32 = TimeGrid(0.0, 1.0, 32)
    for _ in range(ctx.c5_triples):
        q1 = float(rng.uniform(0.05, 0.45))
        q2 = float(rng.uniform(q1 + 0.2, 0.95))
        x0 = float(rng.uniform(-1.0, 1.0))
        mid = 0.5 * (q1 + q2)
        r1 = ctx.search(0.0, x0, q1, ctx.m_small, ctx.budget_small,
                        grid_points=4)
        r2 = ctx.search(0.0, x0, q2, ctx.m_small, ctx.budget_small,
                        grid_points=4)
        pooled = merge_one_shot([r1.best_policy, r2.best_policy],
                                (mid, 1.0 - mid), grid32)
        key = ("c5-mid", round(q1, 10), round(q2, 10), round(x0, 10))
        if key not in ctx._cache:
            ctx._cache[key] = minimize_over_policies(
                ctx.coupled, OneShotFamily(grid_points=4),
                (mid, 1.0 - mid), x0, grid32, ctx.m_small,
                seed=_seed_for(key), budget=ctx.budget_small + 1,
                extra_candidates=[pooled])
        rm = ctx._cache[key]
        rhs = 0.5 * (r1.best_value + r2.best_value)
        noise = 2.0 * (rm.best_se + 0.5 * r1.best_se + 0.5 * r2.best_se)
        margin = rm.best_value - rhs
        margins.append(margin)
        if margin > noise:
            failures += 1
    ok = grid_ok and failures == 0
    elapsed = time.monotonic() - start
    details = (f"grid second differences >= {min_second:.1e} (tol -1e-10); "
               f"{ctx.c5_triples} midpoint triples, {failures} convexity "
               f"failures, worst margin {max(margins):+.4f}")
    return CriterionResult(5, "belief convexity", ok, details, elapsed,
                           {"min_second": min_second, "margins": margins})


def criterion_6(ctx: AcceptanceContext) -> CriterionResult:
    """Split dominance: the searched value at the prior never exceeds the
    mixture value of any randomly drawn two-atom split (split first, then
    play each atom's searched policy), within twice the combined noise.
    Each split's composite policy is injected into the prior search, so the
    inequality is enforced by an explicit candidate, not sampling luck."""
    start = time.monotonic()
    spec = ctx.coupled
    q0, x0 = 0.5, 0.0
    grid32 = TimeGrid(0.0, 1.0, 32)
    rng = np.random.default_rng(_seed_for("c6"))
    splits = []
    for _ in range(ctx.c6_splits):
        q_hi = float(rng.uniform(0.55, 1.0))
        q_lo = float(rng.uniform(0.0, 0.45))
        lam = (q0 - q_lo) / (q_hi - q_lo)
        splits.append((q_hi, q_lo, lam))

    atom_results = {}
    composites = []
    mixtures = []
    for q_hi, q_lo, lam in splits:
        for q in (q_hi, q_lo):
            if round(q, 10) not in atom_results:
                atom_results[round(q, 10)] = ctx.search(
                    0.0, x0, q, ctx.m_small, ctx.budget_small, grid_points=4)
        r_hi = atom_results[round(q_hi, 10)]
        r_lo = atom_results[round(q_lo, 10)]
        mixtures.append((lam * r_hi.best_value + (1 - lam) * r_lo.best_value,
                         lam * r_hi.best_se + (1 - lam) * r_lo.best_se))
        clone_hi = policy_from_dict(policy_to_dict(r_hi.best_policy)).root
        clone_lo = policy_from_dict(policy_to_dict(r_lo.best_policy)).root
        root = make_node((q0, 1.0 - q0), events=(SplitEvent(
            time_index=0, branches=((lam, clone_hi), (1.0 - lam, clone_lo))),))
        composites.append(BeliefPolicy(root, grid32))

    prior = minimize_over_policies(
        spec, OneShotFamily(grid_points=5), (q0, 1.0 - q0), x0, grid32,
        ctx.m_small, seed=_seed_for("c6-prior"),
        budget=ctx.budget_small + len(composites) + 15,
        extra_candidates=composites)

    failures = 0
    worst = -np.inf
    for mix_val, mix_se in mixtures:
        margin = prior.best_value - mix_val
        worst = max(worst, margin - 2.0 * (prior.best_se + mix_se))
        if margin > 2.0 * (prior.best_se + mix_se):
            failures += 1
    ok = failures == 0
    elapsed = time.monotonic() - start
    details = (f"{ctx.c6_splits} random splits, {failures} dominance "
               f"failures, worst noise-adjusted margin {worst:+.4f}, "
               f"prior value {prior.best_value:.4f}")
    return CriterionResult(6, "split dominance", ok, details, elapsed,
                           {"prior_value": prior.best_value})


def criterion_7(ctx: AcceptanceContext) -> CriterionResult:
    """Play guarantee: the extracted feedback + winning revelation policy,
    played against five distinct opponents, never pays more than the grid
    value plus 0.05 plus 3 SE."""
    start = time.monotonic()
    spec = ctx.coupled
    obs = ctx.obstacle()
    strategy = extract_strategy(spec, obs.value)
    res = ctx.search(0.0, 0.0, 0.5, ctx.m_search, ctx.budget_probe)
    w_ref = float(obs.value.interp(0.0, 0.0, 0.5))
    opponents = (["table", "myopic-max"] if ctx.fast else
                 ["table", "myopic-max", "constant:0", "random:11",
                  "alternate"])
    rows = []
    ok = True
    for i, name in enumerate(opponents):
        rep = simulate_play(spec, strategy, res.best_policy, 0.0, ctx.m_play,
                            _seed_for("c7", name), opponent=name,
                            reference=obs.value)
        bound = w_ref + 0.05 + 3.0 * rep.aggregate_se
        rows.append((name, rep.aggregate, bound))
        ok &= rep.aggregate <= bound
    elapsed = time.monotonic() - start
    worst = max(rows, key=lambda r: r[1] - r[2])
    details = (f"{len(opponents)} opponents vs grid value {w_ref:.4f}; "
               f"worst: {worst[0]} paid {worst[1]:.4f} (bound {worst[2]:.4f})")
    return CriterionResult(7, "play value guarantee", ok, details, elapsed,
                           {"rows": rows, "reference": w_ref})


def criterion_8(ctx: AcceptanceContext) -> CriterionResult:
    """Dynamic-programming consistency: integrating the driver to mid-time
    and restarting from the grid value there reproduces the one-shot value
    within 0.05 + 3 SE, on three games with different coefficients."""
    start = time.monotonic()
    rows = []
    ok = True

    # coupled drift game with its searched winner
    res = ctx.search(0.0, 0.0, 0.5, ctx.m_search, ctx.budget_probe)
    rep = dpp_residual(ctx.coupled, res.best_policy, ctx.obstacle().value,
                       0.0, ctx.m_search, _seed_for("c8", "coupled"),
                       t_mid=0.5)
    rows.append(("coupled-B", rep))

    # control-free games: any revelation policy is optimal, the comparison
    # isolates solver bias
    for name, policy_kind in (("driftless-C", "constant"),
                              ("clamped-vol-D", "one-shot")):
        spec = gallery_game(name)
        sol = solve_obstacle_hji(spec, nx=ctx.nx, n_p=21)
        grid32 = TimeGrid(0.0, 1.0, 32)
        if policy_kind == "constant":
            policy = constant_policy((0.6, 0.4), grid32)
        else:
            policy = one_shot_split((0.5, 0.5), [(1.0, 0.0), (0.0, 1.0)],
                                    [0.5, 0.5], grid32)
        rep_g = dpp_residual(spec, policy, sol.value, 0.0, ctx.m_search,
                             _seed_for("c8", name), t_mid=0.5)
        rows.append((name, rep_g))

    parts = []
    for name, rep in rows:
        tol = 0.05 + 3.0 * rep.rollup_se
        ok &= rep.residual <= tol
        parts.append(f"{name}: {rep.residual:.4f}<=({tol:.4f})")
    elapsed = time.monotonic() - start
    details = "mid-time restarts — " + ", ".join(parts)
    return CriterionResult(8, "dynamic-programming consistency", ok, details,
                           elapsed,
                           {n: (r.residual, r.rollup_se) for n, r in rows})


def criterion_9(ctx: AcceptanceContext) -> CriterionResult:
    """Regularity envelopes: the solved grid respects the model-implied
    space-Lipschitz and time-Hölder-1/2 bounds with a pinned margin of 3."""
    start = time.monotonic()
    spec = ctx.coupled
    vg = ctx.obstacle().value
    dx = float(vg.x[1] - vg.x[0])
    slope = float(np.abs(np.diff(vg.w, axis=1)).max() / dx)
    slope_bound = 3.0 * spec.bounds.lip_g
    slope_ok = slope <= slope_bound

    c_lin = 3.0 * (spec.bounds.sup_l + spec.bounds.lip_g * spec.bounds.sup_b)
    c_half = 3.0 * spec.bounds.lip_g * spec.bounds.sup_sigma
    idx = np.unique(np.linspace(0, len(vg.t) - 1, 25).astype(int))
    worst_excess = -np.inf
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            ka, kb = idx[a], idx[b]
            gap = float(np.abs(vg.w[ka] - vg.w[kb]).max())
            dt_ab = float(vg.t[kb] - vg.t[ka])
            allowed = c_lin * dt_ab + c_half * np.sqrt(dt_ab)
            worst_excess = max(worst_excess, gap - allowed)
    time_ok = worst_excess <= 0.0
    ok = slope_ok and time_ok
    elapsed = time.monotonic() - start
    details = (f"x-slope {slope:.3f} <= {slope_bound:.1f}; time modulus "
               f"excess {worst_excess:+.4f} (c_lin={c_lin:.1f}, "
               f"c_half={c_half:.1f})")
    return CriterionResult(9, "regularity envelopes", ok, details, elapsed,
                           {"slope": slope, "excess": worst_excess})


def criterion_10(ctx: AcceptanceContext) -> CriterionResult:
    """Stability of the path-space value under halving the time step,
    doubling the path count, and switching to the fixed-point solver."""
    start = time.monotonic()
    spec = ctx.coupled
    res = ctx.search(0.0, 0.0, 0.5, ctx.m_search, ctx.budget_probe)
    params = res.best_params if res.best_params is not None else (1.0, 1.0)
    fam = OneShotFamily()
    m = ctx.m_search

    def value_at(n_steps: int, m_paths: int, seed):
        grid = TimeGrid(0.0, 1.0, n_steps)
        policy = fam.build(np.asarray(params), (0.5, 0.5), grid)
        return evaluate_policy(spec, policy, 0.0, m_paths, seed,
                               keep_solution=True)

    base = value_at(32, m, _seed_for("c10", "base"))
    fine = value_at(64, m, _seed_for("c10", "fine"))
    wide = value_at(32, 2 * m, _seed_for("c10", "wide"))

    dt_gap = abs(fine.value - base.value)
    dt_tol = 0.02 + 3.0 * (fine.se + base.se)
    m_gap = abs(wide.value - base.value)
    m_tol = 0.01 + 3.0 * (wide.se + base.se)

    problem = BsdeProblem.from_game(spec)
    grid = TimeGrid(0.0, 1.0, 32)
    policy = fam.build(np.asarray(params), (0.5, 0.5), grid)
    bundle = simulate_uncontrolled(spec, 0.0, 0.0, grid, m,
                                   _seed_for("c10", "base"))
    from .belief_policy import sample_belief_paths
    wb = sample_belief_paths(policy, bundle, _seed_for("c10", "base"))
    pic = solve_picard(problem, wb, RegressionConfig(), tol=1e-4)
    back = solve_backward(problem, wb)
    pm_gap = abs(pic.y0 - back.y0)
    pm_tol = 0.01 + 3.0 * (pic.y0_se + back.y0_se)
    ratios = pic.diagnostics["contraction_ratios"]
    contracting = all(r < 1.0 for r in ratios[1:]) if len(ratios) > 1 else True

    ok = dt_gap <= dt_tol and m_gap <= m_tol and pm_gap <= pm_tol and contracting
    elapsed = time.monotonic() - start
    details = (f"half-dt gap {dt_gap:.4f}<=({dt_tol:.4f}), double-m gap "
               f"{m_gap:.4f}<=({m_tol:.4f}), fixed-point vs sweep "
               f"{pm_gap:.4f}<=({pm_tol:.4f}), contraction "
               f"{'monotone' if contracting else 'NOT monotone'} "
               f"({pic.diagnostics['iterations']} iters)")
    return CriterionResult(10, "resolution and method stability", ok, details,
                           elapsed, {"dt_gap": dt_gap, "m_gap": m_gap,
                                     "pm_gap": pm_gap})


ALL_CRITERIA = (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
)


def run_all(fast: bool = False, stream=None) -> list[CriterionResult]:
    """Run the whole acceptance batch; one pass/fail line per criterion."""
    ctx = AcceptanceContext(fast=fast)
    results = []
    for fn in ALL_CRITERIA:
        try:
            res = fn(ctx)
        except InfogameError as exc:     # honest failure, not a crash
            idx = int(fn.__name__.rsplit("_", 1)[1])
            res = CriterionResult(idx, fn.__doc__.split(":")[0].strip(),
                                  False, f"raised {type(exc).__name__}: {exc}",
                                  0.0)
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    return results
