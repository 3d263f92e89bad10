"""Backward equation solver on simulated paths with cell-averaging regression.

The conditional expectations of the backward recursion are estimated by
averaging within hypercube cells of the state, crossed with the categorical
belief-node id.  Cell averages are monotone (convex combinations with
nonnegative weights), which is what makes the discrete comparison principle
hold pathwise rather than just on average.

Two solution modes share the regression operator:

* :func:`solve_backward` — one sweep from the horizon backwards;
* :func:`solve_picard` — global fixed-point iterations whose contraction is
  tracked in an exponentially weighted norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonConvergenceError, ValidationError
from .game_model import GameSpec, hamiltonian_tilde_batch, terminal_value_batch
from .sde_engine import PathBundle

Array = np.ndarray


@dataclass(frozen=True)
class RegressionConfig:
    """Cell layout for the conditional-expectation estimator.

    ``cells_per_dim=None`` uses ceil(M^(1/3)) cells per state dimension,
    which balances cell bias against in-cell noise for the one-sweep scheme.
    Cells whose population falls below ``min_cell_size`` fall back to the
    belief-node marginal (all states pooled); fallbacks are counted in the
    diagnostics, never silent.
    """

    cells_per_dim: int | None = None
    min_cell_size: int = 2

    def resolve_cells(self, m: int) -> int:
        if self.cells_per_dim is not None:
            return max(1, int(self.cells_per_dim))
        return max(1, int(np.ceil(m ** (1.0 / 3.0))))


@dataclass
class BsdeProblem:
    """Driver + terminal data for a backward equation along a path bundle.

    ``driver(t, x, z, p) -> (M,)`` and ``terminal(x, p) -> (M,)`` follow the
    batch conventions of the game model.  ``z_lipschitz`` is the declared
    Lipschitz constant of the driver in z; when set, it is spot-checked by
    finite differences before the first solve.
    """

    driver: Callable
    terminal: Callable
    z_lipschitz: float | None = None
    name: str = "custom"
    _lipschitz_checked: bool = field(default=False, repr=False)

    @classmethod
    def from_game(cls, spec: GameSpec) -> "BsdeProblem":
        """The game's own backward equation: sigma-transformed Hamiltonian
        driver and belief-weighted terminal payoff."""

        def driver(t, x, z, p):
            return hamiltonian_tilde_batch(spec, t, x, z, p)

        def terminal(x, p):
            return terminal_value_batch(spec, x, p)

        return cls(driver=driver, terminal=terminal,
                   z_lipschitz=spec.bounds.driver_z_lipschitz,
                   name=f"game:{spec.name}")


@dataclass
class BsdeSolution:
    y: Array                 # (M, N+1)
    z: Array                 # (M, N, d)
    resid: Array             # (M, N) orthogonal increments
    y0: float
    y0_se: float
    driver_values: Array     # (M, N)
    method: str
    diagnostics: dict

    def pathwise_values(self, bundle: PathBundle) -> Array:
        """xi + integral of the driver, path by path; its mean reproduces y0
        up to regression fallbacks, and its spread is the honest Monte Carlo
        error scale for y0."""
        return self.y[:, -1] + self.driver_values.sum(axis=1) * bundle.grid.dt


def check_driver_lipschitz(problem: BsdeProblem, bundle: PathBundle,
                           n_probes: int = 100, rel_step: float = 1e-4,
                           seed: int = 0, slack: float = 0.05) -> float:
    """Finite-difference probe of the driver's declared z-Lipschitz constant.

    Draws ``n_probes`` random (t, x, z, p) points spread over the bundle's
    ranges and compares directional difference quotients against the declared
    constant.  Raises ``ValidationError`` if any probe exceeds it by more
    than ``slack`` (relative).  Returns the largest observed slope.
    """
    if problem.z_lipschitz is None:
        return 0.0
    rng = np.random.default_rng(seed)
    m, n, d = bundle.dB.shape
    n_i = bundle.beliefs.shape[2] if bundle.beliefs is not None else 1
    xs_lo = bundle.X.reshape(-1, d).min(axis=0) - 0.5
    xs_hi = bundle.X.reshape(-1, d).max(axis=0) + 0.5
    worst = 0.0
    n_t = 4
    per_t = max(1, n_probes // n_t)
    for t in np.linspace(bundle.grid.t0, bundle.grid.t_end, n_t):
        x = rng.uniform(xs_lo, xs_hi, size=(per_t, d))
        z = rng.normal(scale=2.0, size=(per_t, d))
        p = rng.dirichlet(np.ones(n_i), size=per_t)
        direction = rng.normal(size=(per_t, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        h = rel_step * np.maximum(1.0, np.linalg.norm(z, axis=1))
        f0 = np.asarray(problem.driver(float(t), x, z, p))
        f1 = np.asarray(problem.driver(float(t), x, z + h[:, None] * direction, p))
        slopes = np.abs(f1 - f0) / h
        worst = max(worst, float(slopes.max()))
    if worst > problem.z_lipschitz * (1.0 + slack) + 1e-12:
        raise ValidationError(
            f"driver violates declared z-Lipschitz constant: observed slope "
            f"{worst:.4g} > declared {problem.z_lipschitz:.4g}"
        )
    problem._lipschitz_checked = True
    return worst


# ---------------------------------------------------------------------------
# Cell-averaging regression
# ---------------------------------------------------------------------------


class StepRegression:
    """Conditional expectation at one time slice.

    Cells are the product of per-dimension quantile bins of the state with
    the belief-node id.  All estimates are plain in-cell averages; the z
    estimate additionally centers the Brownian increment within the cell so
    that adding a constant to the integrand never moves it.
    """

    def __init__(self, x: Array, nodes: Array, cfg: RegressionConfig):
        m, d = x.shape
        n_bins = cfg.resolve_cells(m)
        code = np.zeros(m, dtype=np.int64)
        width = 1
        for j in range(d):
            if n_bins > 1:
                qs = np.quantile(x[:, j], np.linspace(0, 1, n_bins + 1)[1:-1])
                edges = np.unique(qs)
            else:
                edges = np.empty(0)
            code = code * (len(edges) + 1) + np.searchsorted(edges, x[:, j],
                                                             side="right")
            width *= len(edges) + 1
        node_ids, node_code = np.unique(nodes, return_inverse=True)
        self.n_cells = width * len(node_ids)
        self.code = node_code * width + code
        self.node_code = node_code
        self.n_nodes = len(node_ids)
        self.counts = np.bincount(self.code, minlength=self.n_cells)
        self.node_counts = np.bincount(node_code, minlength=self.n_nodes)
        self.small = self.counts < cfg.min_cell_size
        self.fallback_paths = int(self.small[self.code].sum())
        self.occupied = int(np.count_nonzero(self.counts))
        self.empty_cells = self.n_cells - self.occupied

    def _cell_mean(self, values: Array) -> tuple[Array, Array]:
        sums = np.bincount(self.code, weights=values, minlength=self.n_cells)
        cell = sums / np.maximum(self.counts, 1)
        nsums = np.bincount(self.node_code, weights=values, minlength=self.n_nodes)
        node = nsums / np.maximum(self.node_counts, 1)
        return cell, node

    def mean(self, values: Array) -> Array:
        """Per-path conditional mean E[values | cell]."""
        cell, node = self._cell_mean(values)
        out = cell[self.code]
        mask = self.small[self.code]
        if mask.any():
            out[mask] = node[self.node_code[mask]]
        return out

    def cov_over(self, values: Array, db: Array, dt: float) -> Array:
        """Per-path estimate of E[values * dB | cell] / dt, centered."""
        m, d = db.shape
        out = np.empty((m, d))
        v_cell, v_node = self._cell_mean(values)
        for j in range(d):
            b_cell, b_node = self._cell_mean(db[:, j])
            vb_cell, vb_node = self._cell_mean(values * db[:, j])
            cell = (vb_cell - v_cell * b_cell) / dt
            node = (vb_node - v_node * b_node) / dt
            col = cell[self.code]
            mask = self.small[self.code]
            if mask.any():
                col[mask] = node[self.node_code[mask]]
            out[:, j] = col
        return out


def _require_beliefs(bundle: PathBundle) -> tuple[Array, Array]:
    if bundle.beliefs is None or bundle.belief_nodes is None:
        raise ValidationError(
            "bundle carries no belief paths; sample a belief policy onto it first"
        )
    return bundle.beliefs, bundle.belief_nodes


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def solve_backward(problem: BsdeProblem, bundle: PathBundle,
                   regression: RegressionConfig | None = None) -> BsdeSolution:
    """One backward sweep: per step, regress the next value on the current
    cell to get the conditional mean and the increment loading, then add the
    driver.

    Returns the full per-path arrays plus diagnostics (fallback counts,
    orthogonal-residual norms, the identity defect between y0 and the mean
    pathwise value).
    """
    cfg = regression or RegressionConfig()
    beliefs, nodes = _require_beliefs(bundle)
    if problem.z_lipschitz is not None and not problem._lipschitz_checked:
        check_driver_lipschitz(problem, bundle)
    m, n, d = bundle.dB.shape
    dt = bundle.grid.dt
    y = np.empty((m, n + 1))
    z = np.zeros((m, n, d))
    resid = np.zeros((m, n))
    fs = np.zeros((m, n))
    xi = np.asarray(problem.terminal(bundle.X[:, n], beliefs[:, n]))
    if xi.shape != (m,):
        raise ValidationError(
            f"terminal callable returned shape {xi.shape}, expected ({m},)")
    y[:, n] = xi
    fallbacks = np.zeros(n, dtype=int)
    empty = np.zeros(n, dtype=int)
    for k in range(n - 1, -1, -1):
        t_k = bundle.grid.node(k)
        reg = StepRegression(bundle.X[:, k], nodes[:, k], cfg)
        z[:, k] = reg.cov_over(y[:, k + 1], bundle.dB[:, k], dt)
        a = reg.mean(y[:, k + 1])
        fs[:, k] = np.asarray(problem.driver(t_k, bundle.X[:, k], z[:, k],
                                             beliefs[:, k]))
        y[:, k] = a + fs[:, k] * dt
        resid[:, k] = y[:, k + 1] - a - np.einsum("md,md->m", z[:, k],
                                                  bundle.dB[:, k])
        fallbacks[k] = reg.fallback_paths
        empty[k] = reg.empty_cells
    if not np.isfinite(y).all():
        raise NonConvergenceError("backward sweep produced non-finite values")
    pathwise = y[:, n] + fs.sum(axis=1) * dt
    y0 = float(y[:, 0].mean())
    y0_se = float(pathwise.std(ddof=1) / np.sqrt(m))
    diag = {
        "method": "backward",
        "fallback_paths_per_step": fallbacks.tolist(),
        "empty_cells_per_step": empty.tolist(),
        "resid_rms_per_step": np.sqrt((resid ** 2).mean(axis=0)).tolist(),
        "identity_defect": abs(float(pathwise.mean()) - y0),
        "cells_per_dim": cfg.resolve_cells(m),
    }
    return BsdeSolution(y=y, z=z, resid=resid, y0=y0, y0_se=y0_se,
                        driver_values=fs, method="backward", diagnostics=diag)


def solve_picard(problem: BsdeProblem, bundle: PathBundle,
                 regression: RegressionConfig | None = None,
                 tol: float = 1e-5, max_iters: int = 40) -> BsdeSolution:
    """Global fixed-point iteration: freeze z, rebuild value and loading from
    the full remaining integral, repeat.

    Successive z differences are measured in the norm weighted by
    exp(beta * t) with beta = 2c^2 + 1 (c the declared z-Lipschitz constant),
    the weighting under which the iteration is a geometric contraction.
    Raises ``NonConvergenceError`` when the budget runs out.
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be at least 1")
    cfg = regression or RegressionConfig()
    beliefs, nodes = _require_beliefs(bundle)
    if problem.z_lipschitz is not None and not problem._lipschitz_checked:
        check_driver_lipschitz(problem, bundle)
    m, n, d = bundle.dB.shape
    dt = bundle.grid.dt
    c = problem.z_lipschitz if problem.z_lipschitz else 1.0
    beta = 2.0 * c * c + 1.0
    wts = np.exp(beta * (bundle.grid.nodes[:n] - bundle.grid.t0))

    regs = [StepRegression(bundle.X[:, k], nodes[:, k], cfg) for k in range(n)]
    xi = np.asarray(problem.terminal(bundle.X[:, n], beliefs[:, n]))

    def weighted_norm(dz: Array) -> float:
        return float(np.sqrt((dz ** 2).sum(axis=2).mean(axis=0) @ wts * dt))

    z = np.zeros((m, n, d))
    fs = np.zeros((m, n))
    ratios: list[float] = []
    prev_delta = None
    y = np.empty((m, n + 1))
    y[:, n] = xi
    for it in range(max_iters):
        for k in range(n):
            fs[:, k] = np.asarray(problem.driver(bundle.grid.node(k),
                                                 bundle.X[:, k], z[:, k],
                                                 beliefs[:, k]))
        # tail[k] = xi + sum_{j >= k} f_j dt, built backwards
        tail = xi.copy()
        z_new = np.empty_like(z)
        for k in range(n - 1, -1, -1):
            z_new[:, k] = regs[k].cov_over(tail, bundle.dB[:, k], dt)
            tail = tail + fs[:, k] * dt
            y[:, k] = regs[k].mean(tail)
        delta = weighted_norm(z_new - z)
        z = z_new
        if prev_delta is not None and prev_delta > 0:
            ratios.append(delta / prev_delta)
        prev_delta = delta
        scale = 1.0 + weighted_norm(z)
        if delta <= tol * scale:
            break
    else:
        raise NonConvergenceError(
            f"fixed-point iteration did not reach tolerance {tol} in "
            f"{max_iters} iterations (last delta {prev_delta:.3g})"
        )
    # final consistency pass with the converged z
    for k in range(n):
        fs[:, k] = np.asarray(problem.driver(bundle.grid.node(k), bundle.X[:, k],
                                             z[:, k], beliefs[:, k]))
    tail = xi.copy()
    for k in range(n - 1, -1, -1):
        tail = tail + fs[:, k] * dt
        y[:, k] = regs[k].mean(tail)
    resid = np.empty((m, n))
    for k in range(n):
        a = regs[k].mean(y[:, k + 1])
        resid[:, k] = y[:, k + 1] - a - np.einsum("md,md->m", z[:, k],
                                                  bundle.dB[:, k])
    pathwise = xi + fs.sum(axis=1) * dt
    y0 = float(y[:, 0].mean())
    y0_se = float(pathwise.std(ddof=1) / np.sqrt(m))
    diag = {
        "method": "picard",
        "iterations": it + 1,
        "contraction_ratios": ratios,
        "beta": beta,
        "final_delta": prev_delta,
        "fallback_paths_per_step": [r.fallback_paths for r in regs],
        "cells_per_dim": cfg.resolve_cells(m),
    }
    return BsdeSolution(y=y, z=z, resid=resid, y0=y0, y0_se=y0_se,
                        driver_values=fs, method="picard", diagnostics=diag)


# ---------------------------------------------------------------------------
# Order and stability checks
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    min_gap: float
    worst_path: int
    worst_step: int
    n_violations: int
    passed: bool

    def __str__(self):
        state = "holds" if self.passed else "FAILS"
        return (f"comparison {state}: min(y1 - y2) = {self.min_gap:.3e} at "
                f"path {self.worst_path}, step {self.worst_step} "
                f"({self.n_violations} entries below -1e-9)")


def comparison_check(sol_hi: BsdeSolution, sol_lo: BsdeSolution,
                     tol: float = 1e-9) -> ComparisonReport:
    """Pathwise order check between two solutions on the same bundle.

    For ordered data (terminal and driver of ``sol_hi`` dominating those of
    ``sol_lo`` at equal arguments) the cell-averaging scheme preserves the
    order at every (path, step) — up to rounding, hence the small cushion.
    """
    if sol_hi.y.shape != sol_lo.y.shape:
        raise ValidationError("solutions have different shapes")
    gap = sol_hi.y - sol_lo.y
    flat = int(np.argmin(gap))
    worst_path, worst_step = np.unravel_index(flat, gap.shape)
    min_gap = float(gap.min())
    n_viol = int(np.count_nonzero(gap < -tol))
    return ComparisonReport(min_gap=min_gap, worst_path=int(worst_path),
                            worst_step=int(worst_step), n_violations=n_viol,
                            passed=n_viol == 0)


@dataclass
class AprioriReport:
    lhs: float
    rhs: float
    constant: float
    ratio: float
    satisfied: bool


def apriori_check(problem_a: BsdeProblem, problem_b: BsdeProblem,
                  sol_a: BsdeSolution, sol_b: BsdeSolution,
                  bundle: PathBundle, constant: float | None = None) -> AprioriReport:
    """Stability estimate: the integrated squared z-difference is controlled
    by the terminal mismatch plus the driver mismatch evaluated along the
    second solution's arguments.

    The default constant exp((1 + 2c + 2c^2) (T - t0)) is a deliberately
    generous envelope in the declared Lipschitz constant c.
    """
    beliefs, _ = _require_beliefs(bundle)
    dt = bundle.grid.dt
    m, n, d = bundle.dB.shape
    lhs = float(((sol_a.z - sol_b.z) ** 2).sum(axis=(1, 2)).mean() * dt)
    xi_a = np.asarray(problem_a.terminal(bundle.X[:, n], beliefs[:, n]))
    xi_b = np.asarray(problem_b.terminal(bundle.X[:, n], beliefs[:, n]))
    dxi2 = float(((xi_a - xi_b) ** 2).mean())
    df2 = 0.0
    for k in range(n):
        t_k = bundle.grid.node(k)
        fa = np.asarray(problem_a.driver(t_k, bundle.X[:, k], sol_b.z[:, k],
                                         beliefs[:, k]))
        fb = np.asarray(problem_b.driver(t_k, bundle.X[:, k], sol_b.z[:, k],
                                         beliefs[:, k]))
        df2 += float(((fa - fb) ** 2).mean()) * dt
    c = max(problem_a.z_lipschitz or 0.0, problem_b.z_lipschitz or 0.0, 0.0)
    horizon = bundle.grid.t_end - bundle.grid.t0
    const = constant if constant is not None else float(
        np.exp((1.0 + 2.0 * c + 2.0 * c * c) * horizon))
    rhs = const * (dxi2 + df2)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else float("inf"))
    return AprioriReport(lhs=lhs, rhs=rhs, constant=const, ratio=ratio,
                         satisfied=bool(lhs <= rhs + 1e-12))


def dump_diagnostics(solution: BsdeSolution, path) -> None:
    """Write the solve diagnostics as a JSON document."""
    doc = {"y0": solution.y0, "y0_se": solution.y0_se,
           "method": solution.method, **solution.diagnostics}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
