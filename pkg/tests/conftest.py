"""Shared fixtures: the default profile, its unstable inviscid eigenvalue,
and cached fundamental solutions reused across test modules."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from shearstab import make_profile
from shearstab.odecore import default_mesh
from shearstab.profiles import SpectralParams

# Unstable eigenvalue of the inviscid problem for cubic_exp at alpha = 0.5,
# frozen from two independent routes that agree to 2.6e-13 / 1.6e-8:
#   - boundary-trace shooting + Newton (this package)
#   - global Chebyshev collocation on the mapped half-line (tests/oracles.py)
C0_ALPHA_HALF = 0.294969874192 + 0.034836453472j


@pytest.fixture(scope="session")
def profile():
    return make_profile("cubic_exp", [1.0])


@pytest.fixture(scope="session")
def c0():
    return C0_ALPHA_HALF


@pytest.fixture(scope="session")
def params_at_c0(c0):
    return SpectralParams(alpha=0.5, c=c0, nu=0.0, gamma=1.0)


@pytest.fixture(scope="session")
def mesh(profile):
    return default_mesh(profile.y_max)


@pytest.fixture(scope="session")
def solution_pair(profile, mesh):
    """Decaying/growing original-operator pair at a comfortably unstable c."""
    from shearstab import rayleigh

    s = SpectralParams(alpha=1.0, c=C0_ALPHA_HALF + 0.1j, nu=0.0, gamma=1.0)
    fm = rayleigh.fundamental_solution(profile, s, "decaying", "original", mesh=mesh)
    fp = rayleigh.fundamental_solution(profile, s, "growing", "original", mesh=mesh)
    return s, fm, fp
