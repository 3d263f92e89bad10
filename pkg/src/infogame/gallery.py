"""Built-in test games, addressable by name.

Every entry keeps the data bounded and Lipschitz with explicitly declared
constants, so validation and the diagnostic regularity bounds have real
numbers to work against.  Factories accept keyword overrides for the few
numeric knobs (horizon, coupling strength, control levels), which is also
how config files parametrize them.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .game_model import GameBounds, GameSpec


def _tanh(x):
    return np.tanh(x[:, 0])


def _neg_tanh(x):
    return -np.tanh(x[:, 0])


def _half_tanh_2x(x):
    return 0.5 * np.tanh(2.0 * x[:, 0])


def separated_a(horizon: float = 1.0, levels=(-1.0, 0.0, 1.0)) -> GameSpec:
    """Drift u + v, costs additively separated in (u, v), unit volatility.

    The per-scenario costs weight the two quadratic control penalties
    differently, so the informed player's incentives move with the scenario
    even though the min-max always splits into two one-dimensional problems.
    """
    levels = tuple(float(c) for c in levels)
    lmax = max(abs(c) for c in levels)

    def drift(t, x, u, v):
        return np.full((x.shape[0], 1), u + v)

    def sigma(t, x):
        return np.eye(1)

    def cost0(t, x, u, v):
        return np.full(x.shape[0], 0.5 * u * u - 0.5 * v * v)

    def cost1(t, x, u, v):
        return np.full(x.shape[0], 1.0 * u * u - 0.25 * v * v)

    bounds = GameBounds(
        sup_b=2.0 * lmax,
        sup_l=max(0.5, 1.0) * lmax * lmax,
        sup_g=1.0,
        lip_g=1.0,
        sup_sigma=1.0,
        sup_sigma_inv=1.0,
        lip_x=0.0,
    )
    return GameSpec(
        d=1, n_scenarios=2, horizon=float(horizon),
        drift=drift, sigma=sigma,
        costs=(cost0, cost1), payoffs=(_tanh, _neg_tanh),
        u_grid=levels, v_grid=levels,
        bounds=bounds, name="separated-A",
    )


def coupled_b(horizon: float = 1.0, kappa: float = 1.0,
              levels=(-1.0, 0.0, 1.0)) -> GameSpec:
    """Scenario-coupled control costs: pushing the state is cheap in one
    scenario and expensive in the other.

    The belief-weighted cost kappa * (2 p_0 - 1) * u makes the running
    Hamiltonian concave in the belief, so hiding information is costly and
    the revelation machinery has real work to do.  Terminal payoffs point in
    opposite directions across scenarios for the same reason.
    """
    levels = tuple(float(c) for c in levels)
    lmax = max(abs(c) for c in levels)
    kappa = float(kappa)

    def drift(t, x, u, v):
        return np.full((x.shape[0], 1), u + v)

    def sigma(t, x):
        return np.eye(1)

    def cost0(t, x, u, v):
        return np.full(x.shape[0], kappa * u)

    def cost1(t, x, u, v):
        return np.full(x.shape[0], -kappa * u)

    bounds = GameBounds(
        sup_b=2.0 * lmax,
        sup_l=kappa * lmax,
        sup_g=1.0,
        lip_g=1.0,
        sup_sigma=1.0,
        sup_sigma_inv=1.0,
        lip_x=0.0,
    )
    return GameSpec(
        d=1, n_scenarios=2, horizon=float(horizon),
        drift=drift, sigma=sigma,
        costs=(cost0, cost1), payoffs=(_tanh, _neg_tanh),
        u_grid=levels, v_grid=levels,
        bounds=bounds, name="coupled-B",
    )


def driftless_c(horizon: float = 1.0) -> GameSpec:
    """No drift, no running cost: the value is a pure heat evolution of the
    belief-weighted terminal payoffs.  Closed-form convolutions make this the
    calibration target for both solvers."""

    def drift(t, x, u, v):
        return np.zeros((x.shape[0], 1))

    def sigma(t, x):
        return np.eye(1)

    def zero_cost(t, x, u, v):
        return np.zeros(x.shape[0])

    bounds = GameBounds(
        sup_b=0.0, sup_l=0.0, sup_g=1.0, lip_g=1.0,
        sup_sigma=1.0, sup_sigma_inv=1.0, lip_x=0.0,
    )
    return GameSpec(
        d=1, n_scenarios=2, horizon=float(horizon),
        drift=drift, sigma=sigma,
        costs=(zero_cost, zero_cost), payoffs=(_tanh, _half_tanh_2x),
        u_grid=(0.0,), v_grid=(0.0,),
        bounds=bounds, name="driftless-C",
    )


def clamped_vol_d(horizon: float = 1.0, vol: float = 0.2,
                  clamp: tuple[float, float] = (0.5, 4.0)) -> GameSpec:
    """State-proportional volatility clamped away from zero and infinity.

    sigma(x) = vol * clip(|x|, clamp_lo, clamp_hi) keeps the diffusion
    bounded, Lipschitz and non-degenerate while still exercising genuinely
    state-dependent noise in the path engine.
    """
    lo, hi = float(clamp[0]), float(clamp[1])
    if not 0 < lo < hi:
        raise ValidationError("clamp interval must satisfy 0 < lo < hi")
    vol = float(vol)

    def drift(t, x, u, v):
        return np.zeros((x.shape[0], 1))

    def sigma(t, x):
        s = vol * np.clip(np.abs(x[:, 0]), lo, hi)
        return s[:, None, None]

    def zero_cost(t, x, u, v):
        return np.zeros(x.shape[0])

    bounds = GameBounds(
        sup_b=0.0, sup_l=0.0, sup_g=1.0, lip_g=1.0,
        sup_sigma=vol * hi, sup_sigma_inv=1.0 / (vol * lo), lip_x=0.0,
    )
    return GameSpec(
        d=1, n_scenarios=2, horizon=float(horizon),
        drift=drift, sigma=sigma,
        costs=(zero_cost, zero_cost), payoffs=(_tanh, _neg_tanh),
        u_grid=(0.0,), v_grid=(0.0,),
        bounds=bounds, name="clamped-vol-D",
    )


def planar_e(horizon: float = 1.0, kappa: float = 0.5,
             levels=(-1.0, 0.0, 1.0)) -> GameSpec:
    """Two-dimensional state with a non-diagonal constant diffusion.

    Exists mainly to exercise the d > 1 code paths: matrix solves in the
    sigma-transformed Hamiltonian, vector Girsanov weights, product
    regression cells.
    """
    levels = tuple(float(c) for c in levels)
    lmax = max(abs(c) for c in levels)
    kappa = float(kappa)
    sig = np.array([[1.0, 0.3], [0.0, 0.9]])
    sig_inv_norm = float(np.linalg.svd(np.linalg.inv(sig), compute_uv=False)[0])

    def drift(t, x, u, v):
        out = np.empty((x.shape[0], 2))
        out[:, 0] = u + v
        out[:, 1] = u - v
        return out

    def sigma(t, x):
        return sig

    def cost0(t, x, u, v):
        return np.full(x.shape[0], kappa * u)

    def cost1(t, x, u, v):
        return np.full(x.shape[0], -kappa * u)

    def pay0(x):
        return np.tanh(x[:, 0] + x[:, 1])

    def pay1(x):
        return -np.tanh(x[:, 0] - x[:, 1])

    bounds = GameBounds(
        sup_b=2.0 * lmax * np.sqrt(2.0),
        sup_l=kappa * lmax,
        sup_g=1.0,
        lip_g=np.sqrt(2.0),
        sup_sigma=float(np.linalg.svd(sig, compute_uv=False)[0]),
        sup_sigma_inv=sig_inv_norm,
        lip_x=0.0,
    )
    return GameSpec(
        d=2, n_scenarios=2, horizon=float(horizon),
        drift=drift, sigma=sigma,
        costs=(cost0, cost1), payoffs=(pay0, pay1),
        u_grid=levels, v_grid=levels,
        bounds=bounds, name="planar-E",
    )


GALLERY = {
    "separated-A": separated_a,
    "coupled-B": coupled_b,
    "driftless-C": driftless_c,
    "clamped-vol-D": clamped_vol_d,
    "planar-E": planar_e,
}

#: gallery games whose payoff is additively separated in (u, v); the min-max
#: ordering provably cannot matter for these
SEPARABLE_GAMES = ("separated-A", "coupled-B", "driftless-C", "clamped-vol-D", "planar-E")


def gallery_game(name: str, **overrides) -> GameSpec:
    """Instantiate a built-in game by name with optional numeric overrides."""
    if name not in GALLERY:
        raise ValidationError(
            f"unknown gallery game {name!r}; available: {sorted(GALLERY)}"
        )
    try:
        return GALLERY[name](**overrides)
    except TypeError as exc:
        raise ValidationError(f"bad override for gallery game {name!r}: {exc}") from exc


def list_gallery() -> list[str]:
    return sorted(GALLERY)
