"""Shared fixtures: quiet parameter sets and state builders."""

import numpy as np
import pytest

from epiworld.core import Action, ModelParams, derive_stream, make_state


@pytest.fixture
def det_params():
    """Expectation-mode dynamics, no observation noise, no regime jumps."""
    return ModelParams(deterministic=True, regime_jump_prob=0.0,
                       case_noise_sigma=0.0, hosp_noise_sigma=0.0,
                       survey_noise_sigma=0.0)


@pytest.fixture
def stoch_params():
    """Stochastic dynamics with modest observation noise."""
    return ModelParams(regime_jump_prob=0.0, case_noise_sigma=0.1,
                       hosp_noise_sigma=0.1, survey_noise_sigma=0.05)


@pytest.fixture
def mid_epidemic(det_params):
    """A state several weeks into an outbreak (all compartments populated)."""
    state = make_state(I=2e-3, hosp_lag=det_params.hosp_lag)
    rng = derive_stream(3).child("warm")
    from epiworld.dynamics import step

    for k in range(6):
        state = step(state, Action.uniform(1), det_params, rng.child(k))
    return state


def random_action(gen) -> Action:
    return Action(dims=tuple(int(v) for v in gen.integers(0, 5, size=13)))
