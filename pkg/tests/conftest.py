"""Shared fixtures for the simulator tests."""

import math

import numpy as np
import pytest

from src.model.params import TWO_PI, SystemParams
from src.recipes import ideal_loop
from src.run_config import load_defaults


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: sweep- or fit-scale runs taking more than a few seconds")


@pytest.fixture(scope="session")
def defaults() -> SystemParams:
    return load_defaults()


@pytest.fixture(scope="session")
def resonant_loop(defaults) -> SystemParams:
    """Both modes on resonance, lossless noise-free loop, Omega_m tau = pi/4."""
    return ideal_loop(defaults).with_updates(tau=0.25 * math.pi / defaults.omega_m)


@pytest.fixture(scope="session")
def weak_dbc() -> SystemParams:
    """Low-Q membrane under a weak red-detuned probe, no feedback."""
    omega_m = TWO_PI * 1e6
    kappa = TWO_PI * 3e6
    return SystemParams(
        omega_m=omega_m,
        q_factor=1e4,
        kappa=kappa,
        kappa_in=0.5 * kappa,
        delta_h=-0.5 * kappa,
        delta_v=-kappa,
        g0_h=TWO_PI * 100.0,
        g0_v=TWO_PI * 100.0,
        p_h_in=1e-6,
        p_v_aux=1e-6,
        wavelength=1550e-9,
        bath_temperature=300.0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1140)
