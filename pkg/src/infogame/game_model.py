"""Game data and exact min-max Hamiltonians on finite control grids.

A game couples common dynamics (drift ``b``, diffusion ``sigma``) with one
running cost and one terminal payoff per scenario.  Player 1 (the minimizer)
knows which scenario was drawn; Player 2 only knows the prior.  Everything
downstream — the regression solver, the finite-difference solver, strategy
extraction — consumes the game exclusively through the operations in this
module, so the min-max here is the single source of truth for both routes.

Vectorization convention for the user-supplied callables:

* ``drift(t, x, u, v)``     -> (M, d)   for ``x`` of shape (M, d)
* ``sigma(t, x)``           -> (d, d) or (M, d, d)
* ``costs[i](t, x, u, v)``  -> (M,)
* ``payoffs[i](x)``         -> (M,)

``u`` and ``v`` are single entries of the control grids (scalars or small
tuples), never arrays: controls are enumerated, not broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import SingularSigmaError, ValidationError

Array = np.ndarray

#: beliefs must sum to one within this tolerance
SIMPLEX_TOL = 1e-12
#: default floor for the smallest singular value of sigma
SV_FLOOR = 1e-8


def as_belief(p, n_scenarios: int | None = None) -> Array:
    """Coerce ``p`` to a float belief vector and check it lies on the simplex."""
    q = np.asarray(p, dtype=float).reshape(-1)
    if n_scenarios is not None and q.size != n_scenarios:
        raise ValidationError(f"belief has {q.size} entries, expected {n_scenarios}")
    if q.size < 1:
        raise ValidationError("belief is empty")
    if np.any(q < -SIMPLEX_TOL):
        raise ValidationError(f"belief has negative entry: {q}")
    if abs(float(q.sum()) - 1.0) > SIMPLEX_TOL * max(1, q.size):
        raise ValidationError(f"belief does not sum to 1: {q} (sum={q.sum()!r})")
    return np.clip(q, 0.0, None)


def vertex_belief(i: int, n_scenarios: int) -> Array:
    """The degenerate belief putting all mass on scenario ``i``."""
    if not 0 <= i < n_scenarios:
        raise ValidationError(f"scenario index {i} out of range 0..{n_scenarios - 1}")
    e = np.zeros(n_scenarios)
    e[i] = 1.0
    return e


@dataclass(frozen=True)
class GameBounds:
    """Declared sup-norm / Lipschitz constants used by validation and sanity bounds.

    ``lip_x`` bounds the x-Lipschitz constant of the drift and all running
    costs jointly; it enters only diagnostic regularity bounds, never the
    solvers themselves.
    """

    sup_b: float
    sup_l: float
    sup_g: float
    lip_g: float
    sup_sigma: float
    sup_sigma_inv: float
    lip_x: float = 0.0

    @property
    def hamiltonian_growth(self) -> float:
        """c with |H(t,x,xi,p)| <= c * (1 + |xi|)."""
        return max(self.sup_b, self.sup_l)

    @property
    def driver_z_lipschitz(self) -> float:
        """Lipschitz constant in z of the sigma-transformed Hamiltonian."""
        return self.sup_b * self.sup_sigma_inv


@dataclass(frozen=True)
class GameSpec:
    """Immutable description of one game instance.

    ``u_grid`` / ``v_grid`` are the finite control sets; the min-max below is
    exact enumeration over them, which keeps every solver reproducible.
    """

    d: int
    n_scenarios: int
    horizon: float
    drift: Callable
    sigma: Callable
    costs: tuple[Callable, ...]
    payoffs: tuple[Callable, ...]
    u_grid: tuple
    v_grid: tuple
    bounds: GameBounds
    sv_floor: float = SV_FLOOR
    name: str = "custom"
    t0: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("state dimension must be >= 1")
        if self.n_scenarios < 1:
            raise ValidationError("need at least one scenario")
        if len(self.costs) != self.n_scenarios or len(self.payoffs) != self.n_scenarios:
            raise ValidationError(
                "costs/payoffs must supply exactly one callable per scenario"
            )
        if len(self.u_grid) < 1 or len(self.v_grid) < 1:
            raise ValidationError("control grids must be non-empty")
        if not self.horizon > self.t0:
            raise ValidationError("horizon must exceed the start time")

    # -- shape helpers ----------------------------------------------------

    def state_batch(self, x) -> Array:
        """Coerce a point or batch of points to shape (M, d)."""
        a = np.asarray(x, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            # a single point of dimension d, or a batch of scalars when d == 1
            a = a.reshape(1, -1) if a.size == self.d and self.d > 1 else a.reshape(-1, 1)
        if a.ndim != 2 or a.shape[1] != self.d:
            raise ValidationError(f"state batch has shape {a.shape}, expected (M, {self.d})")
        return a

    def sigma_batch(self, t: float, x: Array) -> Array:
        """Evaluate sigma on a batch, always returning shape (M, d, d)."""
        s = np.asarray(self.sigma(t, x), dtype=float)
        m = x.shape[0]
        if s.shape == (self.d, self.d):
            s = np.broadcast_to(s, (m, self.d, self.d))
        if s.shape != (m, self.d, self.d):
            raise ValidationError(f"sigma returned shape {s.shape}")
        return s


class Saddle(NamedTuple):
    """Result of the exact grid min-max: values and grid indices."""

    u: object
    v: object
    iu: int
    iv: int
    value: float


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


def control_payoff_tensor(spec: GameSpec, t: float, x: Array, xi: Array, p: Array) -> Array:
    """Instantaneous payoff <b, xi> + sum_i p_i l_i for every control pair.

    Parameters
    ----------
    x, xi : arrays of shape (M, d)
    p : array of shape (M, n_scenarios)

    Returns
    -------
    tensor of shape (n_u, n_v, M)
    """
    nu, nv, m = len(spec.u_grid), len(spec.v_grid), x.shape[0]
    out = np.empty((nu, nv, m))
    for iu, u in enumerate(spec.u_grid):
        for iv, v in enumerate(spec.v_grid):
            b = np.asarray(spec.drift(t, x, u, v), dtype=float).reshape(m, spec.d)
            val = np.einsum("md,md->m", b, xi)
            for i in range(spec.n_scenarios):
                li = np.asarray(spec.costs[i](t, x, u, v), dtype=float).reshape(m)
                val = val + p[:, i] * li
            out[iu, iv] = val
    return out


def hamiltonian_batch(spec: GameSpec, t: float, x: Array, xi: Array, p: Array) -> Array:
    """min over u of max over v of the control payoff, for a whole batch."""
    tensor = control_payoff_tensor(spec, t, x, xi, p)
    return tensor.max(axis=1).min(axis=0)


def hamiltonian(spec: GameSpec, t: float, x, xi, p) -> float:
    """Lower game Hamiltonian at a single point.

    Exact enumeration over ``u_grid`` x ``v_grid``; the minimizing player
    moves first (min of the per-u maxima).
    """
    xb = spec.state_batch(x)
    xib = np.asarray(xi, dtype=float).reshape(1, spec.d)
    pb = as_belief(p, spec.n_scenarios).reshape(1, -1)
    return float(hamiltonian_batch(spec, t, xb, xib, pb)[0])


def hamiltonian_upper(spec: GameSpec, t: float, x, xi, p) -> float:
    """max over v of min over u — the other ordering, used for the Isaacs gap."""
    xb = spec.state_batch(x)
    xib = np.asarray(xi, dtype=float).reshape(1, spec.d)
    pb = as_belief(p, spec.n_scenarios).reshape(1, -1)
    tensor = control_payoff_tensor(spec, t, xb, xib, pb)
    return float(tensor.min(axis=0).max(axis=0)[0])


def isaacs_gap(spec: GameSpec, probes: Sequence[tuple]) -> float:
    """Largest |minmax - maxmin| over probe points (t, x, xi, p).

    Zero means the two orderings coincide on the grid at every probe, i.e.
    the game value is order-independent there.
    """
    worst = 0.0
    for (t, x, xi, p) in probes:
        lo = hamiltonian(spec, t, x, xi, p)
        hi = hamiltonian_upper(spec, t, x, xi, p)
        worst = max(worst, abs(lo - hi))
    return worst


def argminmax_control(spec: GameSpec, t: float, x, xi, p) -> Saddle:
    """Selection of the optimal pair: u* attains the outer min, v* the inner
    max at u*.  Ties break to the lowest grid index, u first then v.
    """
    xb = spec.state_batch(x)
    xib = np.asarray(xi, dtype=float).reshape(1, spec.d)
    pb = as_belief(p, spec.n_scenarios).reshape(1, -1)
    tensor = control_payoff_tensor(spec, t, xb, xib, pb)[:, :, 0]
    inner = tensor.max(axis=1)
    iu = int(np.argmin(inner))        # np.argmin returns the first minimizer
    iv = int(np.argmax(tensor[iu]))
    return Saddle(spec.u_grid[iu], spec.v_grid[iv], iu, iv, float(tensor[iu, iv]))


def argminmax_batch(spec: GameSpec, t: float, x: Array, xi: Array, p: Array) -> tuple[Array, Array]:
    """Vectorized argminmax over a batch; returns (iu, iv) index arrays."""
    tensor = control_payoff_tensor(spec, t, x, xi, p)       # (nu, nv, M)
    inner = tensor.max(axis=1)                              # (nu, M)
    iu = np.argmin(inner, axis=0)                           # (M,)
    rows = np.take_along_axis(tensor, iu[None, None, :], axis=0)[0]  # (nv, M)
    iv = np.argmax(rows, axis=0)
    return iu.astype(np.int64), iv.astype(np.int64)


# ---------------------------------------------------------------------------
# sigma-transformed Hamiltonian
# ---------------------------------------------------------------------------


def _smallest_sv(mats: Array) -> float:
    """Smallest singular value over a batch of (M, d, d) matrices."""
    if mats.shape[-1] == 1:
        return float(np.abs(mats[:, 0, 0]).min())
    return float(np.linalg.svd(mats, compute_uv=False)[..., -1].min())


def sigma_inv_transpose_apply(spec: GameSpec, t: float, x: Array, zeta: Array) -> Array:
    """Solve sigma(t,x)^T xi = zeta path by path, guarding against singularity."""
    s = spec.sigma_batch(t, x)
    sv = _smallest_sv(s)
    if sv < spec.sv_floor:
        raise SingularSigmaError(sv, spec.sv_floor, where=f"t={t}")
    if spec.d == 1:
        return zeta / s[:, :, 0]
    return np.linalg.solve(np.swapaxes(s, -1, -2), zeta[..., None])[..., 0]


def hamiltonian_tilde_batch(spec: GameSpec, t: float, x: Array, zeta: Array, p: Array) -> Array:
    """Hamiltonian evaluated at xi = sigma(t,x)^{-T} zeta, batched."""
    xi = sigma_inv_transpose_apply(spec, t, x, zeta)
    return hamiltonian_batch(spec, t, x, xi, p)


def hamiltonian_tilde(spec: GameSpec, t: float, x, zeta, p) -> float:
    """Driver for the regression solver: the Hamiltonian read through sigma.

    Composing with sigma^{-T} lets the backward equation run against raw
    Brownian increments instead of sigma-weighted ones.
    """
    xb = spec.state_batch(x)
    zb = np.asarray(zeta, dtype=float).reshape(1, spec.d)
    pb = as_belief(p, spec.n_scenarios).reshape(1, -1)
    return float(hamiltonian_tilde_batch(spec, t, xb, zb, pb)[0])


# ---------------------------------------------------------------------------
# Terminal data and validation
# ---------------------------------------------------------------------------


def terminal_value_batch(spec: GameSpec, x: Array, p: Array) -> Array:
    """sum_i p_i g_i(x) over a batch: x (M, d), p (M, n_scenarios)."""
    m = x.shape[0]
    out = np.zeros(m)
    for i in range(spec.n_scenarios):
        gi = np.asarray(spec.payoffs[i](x), dtype=float).reshape(m)
        out += p[:, i] * gi
    return out


def terminal_value(spec: GameSpec, x, p) -> float:
    """Belief-weighted terminal payoff at a single point."""
    xb = spec.state_batch(x)
    pb = as_belief(p, spec.n_scenarios).reshape(1, -1)
    return float(terminal_value_batch(spec, xb, pb)[0])


def validate_spec(spec: GameSpec, n_probes: int = 200, seed: int = 0,
                  x_box: tuple[float, float] = (-3.0, 3.0)) -> list[str]:
    """Sample-based check of the declared bounds.

    Draws probe points in time and state, evaluates every coefficient on
    them, and reports each violated bound as a human-readable string.  An
    empty list means no violation was detected on the sample.
    """
    rng = np.random.default_rng(seed)
    viol: list[str] = []
    ts = rng.uniform(spec.t0, spec.horizon, size=n_probes)
    xs = rng.uniform(x_box[0], x_box[1], size=(n_probes, spec.d))
    ys = rng.uniform(x_box[0], x_box[1], size=(n_probes, spec.d))
    b = spec.bounds

    for k in range(n_probes):
        t, x = float(ts[k]), xs[k : k + 1]
        s = spec.sigma_batch(t, x)
        sv = _smallest_sv(s)
        if sv < spec.sv_floor:
            viol.append(f"sigma singular value {sv:.3e} < floor at t={t:.3f}, x={x[0]}")
        if np.abs(s).max() > b.sup_sigma + 1e-12:
            viol.append(f"|sigma| exceeds declared bound at t={t:.3f}, x={x[0]}")

    for iu, u in enumerate(spec.u_grid):
        for iv, v in enumerate(spec.v_grid):
            bx = np.asarray(spec.drift(0.5 * (spec.t0 + spec.horizon), xs, u, v))
            if np.abs(bx).max() > b.sup_b + 1e-12:
                viol.append(f"|drift| exceeds declared bound at controls ({iu},{iv})")
            for i in range(spec.n_scenarios):
                lx = np.asarray(spec.costs[i](spec.t0, xs, u, v))
                if np.abs(lx).max() > b.sup_l + 1e-12:
                    viol.append(
                        f"|cost[{i}]| exceeds declared bound at controls ({iu},{iv})"
                    )

    for i in range(spec.n_scenarios):
        gx = np.asarray(spec.payoffs[i](xs))
        gy = np.asarray(spec.payoffs[i](ys))
        if np.abs(gx).max() > b.sup_g + 1e-12:
            viol.append(f"|payoff[{i}]| exceeds declared bound")
        gap = np.abs(gx - gy)
        dist = np.linalg.norm(xs - ys, axis=1)
        bad = gap > b.lip_g * dist + 1e-12
        if np.any(bad):
            j = int(np.argmax(gap - b.lip_g * dist))
            viol.append(
                f"payoff[{i}] violates declared Lipschitz bound between "
                f"{xs[j]} and {ys[j]}"
            )
    return viol
