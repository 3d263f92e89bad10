"""Finite-difference solver for the belief-augmented obstacle equation.

The value of the game with an informed minimizer solves, in the viscosity
sense, a terminal-value PDE on (time, state, belief) that is the largest
convex-in-belief subsolution of the complete-information equation.  This
module discretizes it for scalar state and two scenarios:

* explicit monotone (upwind) step for the transport/diffusion part, taking
  the exact min-max over the finite control grids of the *full* discrete
  one-step operators, so monotonicity survives the control optimization;
* after every step, projection onto convex-in-belief functions via the lower
  convex envelope along the belief axis.

The same stepping kernel, run on a single frozen belief column with the
projection disabled, yields the complete-information value — so vertex
slices of the obstacle solution agree with it bit for bit, a property the
test-suite pins down.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import BlowUpError, CflError, ValidationError
from .game_model import GameSpec

Array = np.ndarray

_MAGIC = b"VGRD"
_VERSION = 1
_CSV_HEADER = "t,x,p,w"


# ---------------------------------------------------------------------------
# Value grid container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueGrid:
    """Value tensor on a (time, state, belief) product grid.

    ``p`` holds the probability assigned to scenario 0; the full belief
    vector at column r is ``(p[r], 1 - p[r])``.  A complete-information
    solve stores a single frozen column.
    """

    t: Array   # (nt+1,) increasing
    x: Array   # (nx,) increasing
    p: Array   # (np,) increasing, within [0, 1]
    w: Array   # (nt+1, nx, np)

    def __post_init__(self):
        if self.w.shape != (len(self.t), len(self.x), len(self.p)):
            raise ValidationError(
                f"value tensor shape {self.w.shape} does not match axes "
                f"({len(self.t)}, {len(self.x)}, {len(self.p)})")

    # -- queries ------------------------------------------------------------

    def interp(self, t, x, q) -> Array:
        """Trilinear interpolation; queries are clamped to the grid box."""
        t = np.clip(np.asarray(t, dtype=float), self.t[0], self.t[-1])
        x = np.clip(np.asarray(x, dtype=float), self.x[0], self.x[-1])
        q = np.clip(np.asarray(q, dtype=float), self.p[0], self.p[-1])
        bt, bx, bq = np.broadcast_arrays(t, x, q)
        shape = bt.shape
        if len(self.p) == 1:
            rgi = RegularGridInterpolator((self.t, self.x), self.w[:, :, 0])
            pts = np.stack([bt.ravel(), bx.ravel()], axis=-1)
        else:
            rgi = RegularGridInterpolator((self.t, self.x, self.p), self.w)
            pts = np.stack([bt.ravel(), bx.ravel(), bq.ravel()], axis=-1)
        out = rgi(pts).reshape(shape)
        return float(out) if shape == () else out

    def interp_belief(self, t, x, beliefs) -> Array:
        """Same, taking full belief vectors of shape (..., 2)."""
        beliefs = np.asarray(beliefs, dtype=float)
        return self.interp(t, x, beliefs[..., 0])

    def slice_at(self, t: float) -> Array:
        """Nearest-node (x, p) slice."""
        k = int(np.argmin(np.abs(self.t - t)))
        return self.w[k]

    # -- persistence ----------------------------------------------------------

    def save_csv(self, path) -> None:
        """Long-format table, one row per grid point: t, x, p, w."""
        tt, xx, pp = np.meshgrid(self.t, self.x, self.p, indexing="ij")
        table = np.column_stack([tt.ravel(), xx.ravel(), pp.ravel(),
                                 self.w.ravel()])
        np.savetxt(path, table, fmt="%.17g", delimiter=",",
                   header=_CSV_HEADER, comments="")

    def save_binary(self, path) -> None:
        header = struct.pack("<4sIIII", _MAGIC, _VERSION, len(self.t),
                             len(self.x), len(self.p))
        with open(path, "wb") as fh:
            fh.write(header)
            for arr in (self.t, self.x, self.p, self.w):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load_binary(cls, path) -> "ValueGrid":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sIIII"))
            magic, version, nt1, nx, n_p = struct.unpack("<4sIIII", head)
            if magic != _MAGIC:
                raise ValidationError(f"not a value-grid file: {path}")
            if version != _VERSION:
                raise ValidationError(f"unsupported value-grid version {version}")
            def take(count):
                buf = fh.read(8 * count)
                if len(buf) != 8 * count:
                    raise ValidationError(f"truncated value-grid file: {path}")
                return np.frombuffer(buf, dtype="<f8").copy()
            t = take(nt1)
            x = take(nx)
            p = take(n_p)
            w = take(nt1 * nx * n_p).reshape(nt1, nx, n_p)
        return cls(t=t, x=x, p=p, w=w)

    @classmethod
    def load_csv(cls, path) -> "ValueGrid":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.shape[1] != 4:
            raise ValidationError(f"expected 4 columns in {path}")
        t_axis = np.unique(table[:, 0])
        x_axis = np.unique(table[:, 1])
        p_axis = np.unique(table[:, 2])
        n = len(t_axis) * len(x_axis) * len(p_axis)
        if table.shape[0] != n:
            raise ValidationError(
                f"{path} is not a complete grid: {table.shape[0]} rows, "
                f"expected {n}")
        order = np.lexsort((table[:, 2], table[:, 1], table[:, 0]))
        w = table[order, 3].reshape(len(t_axis), len(x_axis), len(p_axis))
        return cls(t=t_axis, x=x_axis, p=p_axis, w=w)


# ---------------------------------------------------------------------------
# Convex envelope along the belief axis
# ---------------------------------------------------------------------------


def convex_envelope_1d(values: Array, grid: Array) -> Array:
    """Lower convex envelope of the points (grid[j], values[j]), evaluated
    back on the grid.

    Monotone-chain lower hull; endpoint values are carried over exactly
    (no re-interpolation), which the vertex-slice guarantees rely on.
    """
    values = np.asarray(values, dtype=float)
    grid = np.asarray(grid, dtype=float)
    n = len(values)
    if n <= 2:
        return values.copy()
    hull = [0]
    for j in range(1, n):
        while len(hull) >= 2:
            j0, j1 = hull[-2], hull[-1]
            # drop the middle point when it lies on or above the chord
            lhs = (values[j1] - values[j0]) * (grid[j] - grid[j0])
            rhs = (values[j] - values[j0]) * (grid[j1] - grid[j0])
            if lhs >= rhs:
                hull.pop()
            else:
                break
        hull.append(j)
    idx = np.asarray(hull)
    env = np.interp(grid, grid[idx], values[idx])
    env[idx] = values[idx]
    return env


def apply_envelope(w_slice: Array, q: Array) -> tuple[Array, Array]:
    """Project each state row onto convex-in-belief; returns the projection
    and the mask of points the projection materially lowered.

    The mask ignores displacements at rounding scale: a row that is already
    convex up to machine precision (an exactly linear row, say) may be
    reassembled through chord interpolation a few ulps off, and flagging
    that as obstacle activity would pollute every consumer of the
    active/inactive partition."""
    out = np.empty_like(w_slice)
    for j in range(w_slice.shape[0]):
        out[j] = convex_envelope_1d(w_slice[j], q)
    tol = 1e-12 * (1.0 + float(np.abs(w_slice).max(initial=0.0)))
    return out, (w_slice - out) > tol


# ---------------------------------------------------------------------------
# Monotone stepping kernel
# ---------------------------------------------------------------------------


def _check_support(spec: GameSpec) -> None:
    if spec.d != 1:
        raise ValidationError(
            f"the grid solver handles scalar state only (d={spec.d}); "
            "use the path-space solver for multidimensional games")
    if spec.n_scenarios != 2:
        raise ValidationError(
            f"the grid solver handles two scenarios only "
            f"(n_scenarios={spec.n_scenarios})")


def kushner_minmax_step(spec: GameSpec, t: float, x_axis: Array, q_axis: Array,
                        w_next: Array, dt: float,
                        safety_check: bool = True) -> Array:
    """One explicit backward step, before the envelope projection.

    For every control pair the full discrete operator (upwind transport +
    central diffusion + belief-weighted running cost) is applied to
    ``w_next``; the returned slice is the elementwise min over the
    minimizer's grid of the max over the maximizer's grid.  Mirror ghost
    values (zero-slope boundary) close the stencil at both ends.
    """
    nx = len(x_axis)
    n_p = len(q_axis)
    if w_next.shape != (nx, n_p):
        raise ValidationError("w_next shape does not match the axes")
    dx = float(x_axis[1] - x_axis[0])
    x_col = x_axis.reshape(nx, 1)
    sig = spec.sigma_batch(t, x_col)[:, 0, 0]
    sig2 = sig * sig

    # mirror ghosts: w[-1] := w[1], w[nx] := w[nx-2]
    w_up = np.empty((nx, n_p))      # forward difference / dx
    w_dn = np.empty((nx, n_p))      # backward difference / dx
    w_up[:-1] = (w_next[1:] - w_next[:-1]) / dx
    w_up[-1] = (w_next[-2] - w_next[-1]) / dx
    w_dn[1:] = w_up[:-1]
    w_dn[0] = -w_up[0]
    lap = (w_up - w_dn) / dx        # second difference, ghosts included

    diffusion = 0.5 * sig2[:, None] * lap
    beliefs = np.column_stack([q_axis, 1.0 - q_axis])

    worst_rate = 0.0
    best_over_u = None
    for u in spec.u_grid:
        worst_over_v = None
        for v in spec.v_grid:
            b = spec.drift(t, x_col, u, v)[:, 0]
            b_pos = np.maximum(b, 0.0)
            b_neg = np.maximum(-b, 0.0)
            l0 = np.asarray(spec.costs[0](t, x_col, u, v), dtype=float)
            l1 = np.asarray(spec.costs[1](t, x_col, u, v), dtype=float)
            cost = l0[:, None] * beliefs[:, 0] + l1[:, None] * beliefs[:, 1]
            cand = w_next + dt * (diffusion + b_pos[:, None] * w_up
                                  - b_neg[:, None] * w_dn + cost)
            if safety_check:
                rate = float((sig2 / (dx * dx) + np.abs(b) / dx).max())
                worst_rate = max(worst_rate, rate)
            if worst_over_v is None:
                worst_over_v = cand
            else:
                np.maximum(worst_over_v, cand, out=worst_over_v)
        if best_over_u is None:
            best_over_u = worst_over_v
        else:
            np.minimum(best_over_u, worst_over_v, out=best_over_u)
    if safety_check and dt * worst_rate > 1.0 + 1e-12:
        raise CflError(
            f"explicit step unstable at t={t:.6g}: dt * rate = "
            f"{dt * worst_rate:.4f} > 1; refine the time grid")
    return best_over_u


def _grid_geometry(spec: GameSpec, x_lo, x_hi, nx, nt, safety,
                   probe_halfwidth):
    horizon = spec.horizon - spec.t0
    pad = 6.0 * spec.bounds.sup_sigma * np.sqrt(horizon)
    if x_lo is None:
        x_lo = -probe_halfwidth - pad
    if x_hi is None:
        x_hi = probe_halfwidth + pad
    if not x_hi > x_lo:
        raise ValidationError("domain must satisfy x_hi > x_lo")
    if nx < 3:
        raise ValidationError("nx must be at least 3")
    x_axis = np.linspace(x_lo, x_hi, nx)
    dx = float(x_axis[1] - x_axis[0])
    if nt is None:
        rate = (spec.bounds.sup_sigma ** 2 / (dx * dx)
                + spec.bounds.sup_b / dx)
        if rate <= 0:
            rate = 1.0 / horizon
        nt = max(1, int(np.ceil(horizon * rate / safety)))
    dt = horizon / nt
    return x_axis, dx, int(nt), dt


@dataclass(frozen=True)
class ObstacleSolution:
    """Obstacle-problem solve output: the value grid, where the projection
    acted, and the grid geometry actually used."""

    value: ValueGrid
    activity: Array | None     # (nt, nx, np) bool, time index = step applied at
    dx: float
    dt: float
    max_rate: float            # observed sup of dt * (diffusion+transport rate)

    @property
    def active_fraction(self) -> float:
        if self.activity is None:
            return float("nan")
        return float(self.activity.mean())


def solve_obstacle_hji(spec: GameSpec, *, x_lo: float | None = None,
                       x_hi: float | None = None, nx: int = 201,
                       n_p: int = 51, nt: int | None = None,
                       safety: float = 0.9, probe_halfwidth: float = 3.0,
                       store_activity: bool = False) -> ObstacleSolution:
    """Solve the belief-augmented obstacle equation backward from the
    horizon.

    The time step defaults to the largest explicit-stable value implied by
    the declared coefficient bounds times ``safety``; every step re-checks
    stability against the coefficients actually evaluated and raises
    ``CflError`` rather than integrate an unstable scheme.
    """
    _check_support(spec)
    if n_p < 2:
        raise ValidationError("n_p must be at least 2")
    x_axis, dx, nt, dt = _grid_geometry(spec, x_lo, x_hi, nx, nt, safety,
                                        probe_halfwidth)
    q_axis = np.linspace(0.0, 1.0, n_p)
    t_axis = spec.t0 + (spec.horizon - spec.t0) * np.arange(nt + 1) / nt
    beliefs = np.column_stack([q_axis, 1.0 - q_axis])

    x_col = x_axis.reshape(nx, 1)
    g0 = np.asarray(spec.payoffs[0](x_col), dtype=float)
    g1 = np.asarray(spec.payoffs[1](x_col), dtype=float)
    w = np.empty((nt + 1, nx, n_p))
    w[nt] = g0[:, None] * beliefs[:, 0] + g1[:, None] * beliefs[:, 1]
    activity = np.zeros((nt, nx, n_p), dtype=bool) if store_activity else None

    max_rate = 0.0
    for k in range(nt - 1, -1, -1):
        tilde = kushner_minmax_step(spec, float(t_axis[k + 1]), x_axis,
                                    q_axis, w[k + 1], dt)
        if not np.isfinite(tilde).all():
            raise BlowUpError(f"non-finite values at step {k}")
        env, moved = apply_envelope(tilde, q_axis)
        w[k] = env
        if store_activity:
            activity[k] = moved
        max_rate = max(max_rate, _observed_rate(spec, float(t_axis[k + 1]),
                                                x_axis, dt, dx))
    value = ValueGrid(t=t_axis, x=x_axis, p=q_axis, w=w)
    return ObstacleSolution(value=value, activity=activity, dx=dx, dt=dt,
                            max_rate=max_rate)


def _observed_rate(spec: GameSpec, t: float, x_axis: Array, dt: float,
                   dx: float) -> float:
    x_col = x_axis.reshape(-1, 1)
    sig2 = spec.sigma_batch(t, x_col)[:, 0, 0] ** 2
    b_max = np.zeros(len(x_axis))
    for u in spec.u_grid:
        for v in spec.v_grid:
            b_max = np.maximum(b_max, np.abs(spec.drift(t, x_col, u, v)[:, 0]))
    return float(dt * (sig2 / (dx * dx) + b_max / dx).max())


def complete_info_solve(spec: GameSpec, scenario: int, *,
                        x_lo: float | None = None, x_hi: float | None = None,
                        nx: int = 201, nt: int | None = None,
                        safety: float = 0.9,
                        probe_halfwidth: float = 3.0) -> ValueGrid:
    """Value of the game when the scenario is public knowledge.

    Runs the identical stepping kernel on a single belief column frozen at
    the scenario's vertex, with no envelope projection — floating-point
    operations match the obstacle solve column for column, so the obstacle
    solution's vertex slices equal this value exactly.
    """
    _check_support(spec)
    if not 0 <= scenario < spec.n_scenarios:
        raise ValidationError(f"scenario {scenario} out of range")
    x_axis, dx, nt, dt = _grid_geometry(spec, x_lo, x_hi, nx, nt, safety,
                                        probe_halfwidth)
    q_axis = np.array([1.0 if scenario == 0 else 0.0])
    t_axis = spec.t0 + (spec.horizon - spec.t0) * np.arange(nt + 1) / nt
    beliefs = np.column_stack([q_axis, 1.0 - q_axis])

    x_col = x_axis.reshape(nx, 1)
    g0 = np.asarray(spec.payoffs[0](x_col), dtype=float)
    g1 = np.asarray(spec.payoffs[1](x_col), dtype=float)
    w = np.empty((nt + 1, nx, 1))
    w[nt] = g0[:, None] * beliefs[:, 0] + g1[:, None] * beliefs[:, 1]
    for k in range(nt - 1, -1, -1):
        tilde = kushner_minmax_step(spec, float(t_axis[k + 1]), x_axis,
                                    q_axis, w[k + 1], dt)
        if not np.isfinite(tilde).all():
            raise BlowUpError(f"non-finite values at step {k}")
        w[k] = tilde
    return ValueGrid(t=t_axis, x=x_axis, p=q_axis, w=w)


def nonrevealing_step_residual(spec: GameSpec, solution: ObstacleSolution,
                               step: int) -> Array:
    """Rate at which the envelope projection displaced the free evolution at
    one backward step: (pre-projection slice - stored slice) / dt.

    Zero (up to rounding) where the PDE part holds; strictly positive where
    the convexity obstacle binds.  Vertex columns are identically zero.
    """
    vg = solution.value
    nt = len(vg.t) - 1
    if not 0 <= step < nt:
        raise ValidationError(f"step {step} out of range [0, {nt})")
    tilde = kushner_minmax_step(spec, float(vg.t[step + 1]), vg.x, vg.p,
                                vg.w[step + 1], solution.dt,
                                safety_check=False)
    return (tilde - vg.w[step]) / solution.dt
