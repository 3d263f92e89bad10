"""Shared fixture-building helpers for the test suite.

Most test modules construct tiny custom games whose values we can work out
by hand.  ``make_game`` removes the GameBounds boilerplate; everything else
lives next to the tests that use it so each module stays self-contained.
"""

from __future__ import annotations

import numpy as np
import pytest

from infogame.game_model import GameBounds, GameSpec


def make_game(
    *,
    drift,
    costs,
    payoffs,
    u_grid,
    v_grid,
    d: int = 1,
    horizon: float = 1.0,
    t0: float = 0.0,
    sigma=None,
    sup_b: float,
    sup_l: float,
    sup_g: float,
    lip_g: float,
    sup_sigma: float = 1.0,
    sup_sigma_inv: float = 1.0,
    name: str = "fixture",
) -> GameSpec:
    """Build a GameSpec with explicit bounds and an identity default sigma."""
    if sigma is None:
        eye = np.eye(d)

        def sigma(t, x):  # noqa: ANN001 - matches the coefficient protocol
            return eye

    bounds = GameBounds(
        sup_b=sup_b,
        sup_l=sup_l,
        sup_g=sup_g,
        lip_g=lip_g,
        sup_sigma=sup_sigma,
        sup_sigma_inv=sup_sigma_inv,
    )
    return GameSpec(
        d=d,
        n_scenarios=len(costs),
        horizon=horizon,
        t0=t0,
        drift=drift,
        sigma=sigma,
        costs=tuple(costs),
        payoffs=tuple(payoffs),
        u_grid=tuple(float(u) for u in u_grid),
        v_grid=tuple(float(v) for v in v_grid),
        bounds=bounds,
        name=name,
    )


def const_drift(value: float, d: int = 1):
    def drift(t, x, u, v):
        return np.full((x.shape[0], d), value)

    return drift


def zero_cost(t, x, u, v):
    return np.zeros(x.shape[0])


def tanh_payoff(x):
    return np.tanh(x[:, 0])


def neg_tanh_payoff(x):
    return -np.tanh(x[:, 0])


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)
