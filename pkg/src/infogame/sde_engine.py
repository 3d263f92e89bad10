"""Path simulation: Euler-Maruyama forward dynamics, reproducible noise,
change-of-drift weights.

Randomness contract
-------------------
All noise derives from counter-based Philox streams keyed by
``(seed, salt, block)``, where a block is a fixed-size range of path
indices.  Consequences, relied on throughout the test suite:

* the same seed always reproduces the same paths, bit for bit;
* growing the path count extends the ensemble without reshuffling the
  paths already drawn (blocks are generated whole and trimmed);
* filling blocks concurrently is safe and the result is independent of the
  thread count, because every block owns a disjoint slice of the output.

Different consumers (Brownian increments, belief-split uniforms, opponent
randomization) use different salts, so their streams never collide.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .game_model import GameSpec, sigma_inv_transpose_apply

Array = np.ndarray

#: paths per RNG block; fixed forever — changing it would reshuffle all noise
BLOCK = 4096

#: salt values reserving independent stream families per consumer
SALT_BROWNIAN = 0
SALT_SPLIT = 1
SALT_OPPONENT = 2

#: |log-weight| clip threshold for change-of-drift weights
LOG_WEIGHT_CLIP = 50.0

_MAGIC = b"PBND"
_VERSION = 1


def default_threads() -> int:
    """Thread count from the INFOGAME_THREADS environment variable (min 1)."""
    try:
        return max(1, int(os.environ.get("INFOGAME_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 = t_0 < ... < t_N = t_end."""

    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError("need at least one time step")
        if not self.t_end > self.t0:
            raise ValidationError("t_end must exceed t0")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def nodes(self) -> Array:
        return np.linspace(self.t0, self.t_end, self.n_steps + 1)

    def node(self, k: int) -> float:
        return self.t0 + k * self.dt


def _philox(seed: int, salt: int, block: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64((salt << 48) | block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _fill_blocks(shape_per_path: tuple[int, ...], m: int, seed: int, salt: int,
                 draw: str, n_threads: int) -> Array:
    """Generate (m, *shape_per_path) samples block by block."""
    out = np.empty((m,) + shape_per_path)
    n_blocks = (m + BLOCK - 1) // BLOCK

    def fill(b: int) -> None:
        lo = b * BLOCK
        hi = min(lo + BLOCK, m)
        rng = _philox(seed, salt, b)
        # always draw the whole block so a larger m extends, never reshuffles
        full = getattr(rng, draw)(size=(BLOCK,) + shape_per_path)
        out[lo:hi] = full[: hi - lo]

    if n_threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(fill, range(n_blocks)))
    else:
        for b in range(n_blocks):
            fill(b)
    return out


def brownian_increments(grid: TimeGrid, m: int, d: int, seed: int,
                        n_threads: int | None = None) -> Array:
    """(m, N, d) Gaussian increments with variance dt, Philox-derived."""
    n_threads = default_threads() if n_threads is None else n_threads
    z = _fill_blocks((grid.n_steps, d), m, seed, SALT_BROWNIAN, "standard_normal",
                     n_threads)
    z *= np.sqrt(grid.dt)
    return z


def uniform_draws(grid: TimeGrid, m: int, seed: int, slots: int = 1,
                  salt: int = SALT_SPLIT, n_threads: int | None = None) -> Array:
    """(m, N+1, slots) uniforms for event randomization, independent of dB."""
    n_threads = default_threads() if n_threads is None else n_threads
    return _fill_blocks((grid.n_steps + 1, slots), m, seed, salt, "random", n_threads)


# ---------------------------------------------------------------------------
# Path bundles
# ---------------------------------------------------------------------------


@dataclass
class PathBundle:
    """Simulated ensemble: increments, states and (optionally) belief paths.

    ``X`` has shape (M, N+1, d) with ``X[:, 0] = x0``; ``dB`` has shape
    (M, N, d).  When a belief policy has been sampled onto the bundle,
    ``beliefs`` is (M, N+1, I) holding the right-continuous belief path and
    ``belief_nodes`` is (M, N+1) with the integer id of the policy-tree node
    each path occupies (terminal vertices get their own synthetic ids).
    """

    grid: TimeGrid
    x0: Array
    seed: int
    dB: Array
    X: Array
    beliefs: Array | None = None
    belief_nodes: Array | None = None
    belief_seed: int | None = None

    @property
    def m(self) -> int:
        return self.dB.shape[0]

    @property
    def d(self) -> int:
        return self.dB.shape[2]

    @property
    def n_scenarios(self) -> int | None:
        return None if self.beliefs is None else self.beliefs.shape[2]

    def with_beliefs(self, beliefs: Array, nodes: Array, belief_seed: int) -> "PathBundle":
        if beliefs.shape[:2] != (self.m, self.grid.n_steps + 1):
            raise ValidationError(f"belief array has shape {beliefs.shape}")
        return replace(self, beliefs=beliefs, belief_nodes=nodes, belief_seed=belief_seed)

    # -- binary dump -------------------------------------------------------

    def save(self, path) -> None:
        """Binary dump: fixed header, then little-endian float64 tensors in
        path-major order (dB, X, beliefs, node ids)."""
        n_i = 0 if self.beliefs is None else self.beliefs.shape[2]
        flags = 1 if self.beliefs is not None else 0
        header = struct.pack(
            "<4sIIIIQQddI",
            _MAGIC, _VERSION, self.d, n_i, self.grid.n_steps, self.m,
            self.seed, self.grid.t0, self.grid.t_end, flags,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.x0, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.dB, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
            if self.beliefs is not None:
                fh.write(np.ascontiguousarray(self.beliefs, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(self.belief_nodes, dtype="<f8").tobytes())
                fh.write(struct.pack("<q", -1 if self.belief_seed is None
                                     else self.belief_seed))

    @classmethod
    def load(cls, path) -> "PathBundle":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sIIIIQQddI"))
            magic, version, d, n_i, n, m, seed, t0, t_end, flags = struct.unpack(
                "<4sIIIIQQddI", head
            )
            if magic != _MAGIC:
                raise ValidationError(f"not a path bundle file (magic={magic!r})")
            if version != _VERSION:
                raise ValidationError(f"unsupported bundle version {version}")

            def read(count):
                buf = fh.read(8 * count)
                if len(buf) != 8 * count:
                    raise ValidationError("truncated path bundle file")
                return np.frombuffer(buf, dtype="<f8").astype(float)

            x0 = read(d)
            dB = read(m * n * d).reshape(m, n, d)
            x = read(m * (n + 1) * d).reshape(m, n + 1, d)
            beliefs = nodes = belief_seed = None
            if flags & 1:
                beliefs = read(m * (n + 1) * n_i).reshape(m, n + 1, n_i)
                nodes = read(m * (n + 1)).reshape(m, n + 1).astype(np.int64)
                (bs,) = struct.unpack("<q", fh.read(8))
                belief_seed = None if bs < 0 else int(bs)
        grid = TimeGrid(t0, t_end, n)
        return cls(grid=grid, x0=x0, seed=int(seed), dB=dB, X=x,
                   beliefs=beliefs, belief_nodes=nodes, belief_seed=belief_seed)

    def sanity_check(self) -> dict:
        """Statistical gate on the raw increments.

        Normalized by sqrt(dt), the increments are iid standard normal; the
        mean over all of them concentrates at rate 1/sqrt(M*N) and the
        per-step covariance at rate 1/sqrt(M).  Checks are only binding once
        M*N >= 1e4.
        """
        m, n, d = self.dB.shape
        z = self.dB / np.sqrt(self.grid.dt)
        mean_dev = float(np.abs(z.mean(axis=(0, 1))).max())
        cov_dev = 0.0
        for k in range(n):
            zk = z[:, k, :]
            cov = zk.T @ zk / m
            cov_dev = max(cov_dev, float(np.abs(cov - np.eye(d)).max()))
        binding = m * n >= 10_000
        ok = (not binding) or (mean_dev <= 5.0 / np.sqrt(m * n) and cov_dev <= 0.10)
        return {"mean_dev": mean_dev, "cov_dev": cov_dev,
                "binding": binding, "ok": bool(ok)}


# ---------------------------------------------------------------------------
# Forward simulation
# ---------------------------------------------------------------------------


def sample_sigma_step(spec: GameSpec, t: float, x: Array, db: Array) -> Array:
    s = spec.sigma_batch(t, x)
    if spec.d == 1:
        return s[:, :, 0] * db
    return np.einsum("mij,mj->mi", s, db)


def simulate_uncontrolled(spec: GameSpec, t0: float, x, grid: TimeGrid, m: int,
                          seed: int, n_threads: int | None = None) -> PathBundle:
    """Drift-free dynamics dX = sigma(t, X) dB from X_{t0} = x.

    The returned bundle is the common-random-number basis for everything
    else: control evaluation, reweighting, policy search.
    """
    if abs(grid.t0 - t0) > 1e-12:
        grid = TimeGrid(t0, t0 + (grid.t_end - grid.t0), grid.n_steps)
    x0 = np.asarray(x, dtype=float).reshape(spec.d)
    dB = brownian_increments(grid, m, spec.d, seed, n_threads)
    X = np.empty((m, grid.n_steps + 1, spec.d))
    X[:, 0] = x0
    for k in range(grid.n_steps):
        X[:, k + 1] = X[:, k] + sample_sigma_step(spec, grid.node(k), X[:, k], dB[:, k])
    bundle = PathBundle(grid=grid, x0=x0, seed=seed, dB=dB, X=X)
    if not np.isfinite(X).all():
        raise ValidationError("non-finite state reached in uncontrolled simulation")
    return bundle


def resolve_controls(control, k: int, t: float, x: Array, beliefs: Array | None,
                     n_grid: int, m: int) -> Array:
    """Normalize a control description to per-path grid indices at step k.

    Accepted forms: a single grid index, a per-step index sequence of length
    N, a full (M, N) index array, or a feedback callable
    ``control(k, t, X_k, p_k) -> (M,) indices``.
    """
    if callable(control):
        idx = np.asarray(control(k, t, x, beliefs), dtype=np.int64).reshape(m)
    else:
        arr = np.asarray(control)
        if arr.ndim == 0:
            idx = np.full(m, int(arr), dtype=np.int64)
        elif arr.ndim == 1:
            idx = np.full(m, int(arr[k]), dtype=np.int64)
        elif arr.ndim == 2:
            idx = arr[:, k].astype(np.int64)
        else:
            raise ValidationError(f"cannot interpret control of shape {arr.shape}")
    if idx.min() < 0 or idx.max() >= n_grid:
        raise ValidationError("control index out of grid range")
    return idx


def grouped_drift(spec: GameSpec, t: float, x: Array, iu: Array, iv: Array) -> Array:
    """Evaluate the drift with per-path control indices, grouping identical
    (u, v) pairs so the user callable only ever sees one pair at a time."""
    m = x.shape[0]
    out = np.empty((m, spec.d))
    code = iu * len(spec.v_grid) + iv
    for c in np.unique(code):
        mask = code == c
        u = spec.u_grid[int(c) // len(spec.v_grid)]
        v = spec.v_grid[int(c) % len(spec.v_grid)]
        out[mask] = np.asarray(spec.drift(t, x[mask], u, v), dtype=float).reshape(-1, spec.d)
    return out


def grouped_costs(spec: GameSpec, t: float, x: Array, iu: Array, iv: Array) -> Array:
    """Per-scenario running costs with per-path controls; returns (M, I)."""
    m = x.shape[0]
    out = np.empty((m, spec.n_scenarios))
    code = iu * len(spec.v_grid) + iv
    for c in np.unique(code):
        mask = code == c
        u = spec.u_grid[int(c) // len(spec.v_grid)]
        v = spec.v_grid[int(c) % len(spec.v_grid)]
        for i in range(spec.n_scenarios):
            out[mask, i] = np.asarray(spec.costs[i](t, x[mask], u, v),
                                      dtype=float).reshape(-1)
    return out


def integrate_controlled(spec: GameSpec, t0: float, x, grid: TimeGrid, dB: Array,
                         u, v, beliefs: Array | None = None
                         ) -> tuple[Array, Array, Array]:
    """Euler-Maruyama with explicit increments; returns (X, iu, iv).

    Exposed separately from :func:`simulate_controlled` so tests can inject
    coarsened or otherwise hand-built increments.
    """
    m = dB.shape[0]
    x0 = np.asarray(x, dtype=float).reshape(spec.d)
    X = np.empty((m, grid.n_steps + 1, spec.d))
    X[:, 0] = x0
    iu_all = np.empty((m, grid.n_steps), dtype=np.int64)
    iv_all = np.empty((m, grid.n_steps), dtype=np.int64)
    for k in range(grid.n_steps):
        t = grid.node(k)
        p_k = None if beliefs is None else beliefs[:, k]
        iu = resolve_controls(u, k, t, X[:, k], p_k, len(spec.u_grid), m)
        iv = resolve_controls(v, k, t, X[:, k], p_k, len(spec.v_grid), m)
        iu_all[:, k], iv_all[:, k] = iu, iv
        b = grouped_drift(spec, t, X[:, k], iu, iv)
        X[:, k + 1] = X[:, k] + b * grid.dt + sample_sigma_step(spec, t, X[:, k], dB[:, k])
    if not np.isfinite(X).all():
        raise ValidationError("non-finite state reached in controlled simulation")
    return X, iu_all, iv_all


def simulate_controlled(spec: GameSpec, u, v, t0: float, x, grid: TimeGrid, m: int,
                        seed: int, beliefs: Array | None = None,
                        n_threads: int | None = None) -> PathBundle:
    """Controlled dynamics dX = b(t, X, u, v) dt + sigma(t, X) dB.

    Reuses the increment stream of :func:`simulate_uncontrolled` for the same
    (seed, grid, m): runs differing only in coefficients or controls share
    their noise exactly.
    """
    if abs(grid.t0 - t0) > 1e-12:
        grid = TimeGrid(t0, t0 + (grid.t_end - grid.t0), grid.n_steps)
    dB = brownian_increments(grid, m, spec.d, seed, n_threads)
    X, _, _ = integrate_controlled(spec, t0, x, grid, dB, u, v, beliefs)
    bundle = PathBundle(grid=grid, x0=np.asarray(x, dtype=float).reshape(spec.d),
                        seed=seed, dB=dB, X=X)
    if beliefs is not None:
        bundle = replace(bundle, beliefs=beliefs)
    return bundle


# ---------------------------------------------------------------------------
# Change-of-drift weights
# ---------------------------------------------------------------------------


@dataclass
class GirsanovResult:
    weights: Array
    log_weights: Array
    clip_count: int


def girsanov_weight(spec: GameSpec, bundle: PathBundle, u, v) -> GirsanovResult:
    """Importance weights that give drift-free paths the controlled drift.

    With theta_k solving sigma(t_k, X_k) theta_k = b(t_k, X_k, u_k, v_k), the
    weight is exp(sum_k theta_k . dB_k - 0.5 sum_k |theta_k|^2 dt),
    accumulated in log space and clipped at +/-50 (clips counted, not
    silently ignored).
    """
    m, n, d = bundle.dB.shape
    log_w = np.zeros(m)
    for k in range(n):
        t = bundle.grid.node(k)
        x_k = bundle.X[:, k]
        p_k = None if bundle.beliefs is None else bundle.beliefs[:, k]
        iu = resolve_controls(u, k, t, x_k, p_k, len(spec.u_grid), m)
        iv = resolve_controls(v, k, t, x_k, p_k, len(spec.v_grid), m)
        b = grouped_drift(spec, t, x_k, iu, iv)
        s = spec.sigma_batch(t, x_k)
        if d == 1:
            theta = b / s[:, :, 0]
        else:
            theta = np.linalg.solve(s, b[..., None])[..., 0]
        log_w += np.einsum("md,md->m", theta, bundle.dB[:, k])
        log_w -= 0.5 * np.einsum("md,md->m", theta, theta) * bundle.grid.dt
    clip_count = int(np.count_nonzero(np.abs(log_w) > LOG_WEIGHT_CLIP))
    log_w = np.clip(log_w, -LOG_WEIGHT_CLIP, LOG_WEIGHT_CLIP)
    return GirsanovResult(weights=np.exp(log_w), log_weights=log_w,
                          clip_count=clip_count)
