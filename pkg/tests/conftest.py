"""
Fixtures compartidas: campos y pares de prueba ya construidos, y el generador con la
semilla fija de la config (`settings.RANDOM_SEED`), para que los chequeos por muestreo
sean reproducibles.
"""

import numpy as np
import pytest

from app.core.config import settings
from app.services.potentials import (
    make_asymmetric_field,
    make_gaussian_profile,
    make_square_barrier,
    make_zero_field,
    radialize,
)
from app.services.testfns import BumpSpec, GaussianPair, build_pair


@pytest.fixture
def rng():
    return np.random.default_rng(settings.RANDOM_SEED)


@pytest.fixture(scope="session")
def gaussian_profile():
    return make_gaussian_profile(1.0, 1.0)


@pytest.fixture(scope="session")
def gaussian_field(gaussian_profile):
    return radialize(gaussian_profile, 1)


@pytest.fixture(scope="session")
def translated_field(gaussian_profile):
    return radialize(gaussian_profile, 1, center=[2.0])


@pytest.fixture(scope="session")
def gaussian_field_3d(gaussian_profile):
    return radialize(gaussian_profile, 3)


@pytest.fixture(scope="session")
def asymmetric_field():
    return make_asymmetric_field()


@pytest.fixture(scope="session")
def barrier_field():
    return make_square_barrier(1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def zero_field():
    return make_zero_field(1)


@pytest.fixture(scope="session")
def bump_pair():
    return build_pair(BumpSpec(1.0, 3.0), k_max=20)


@pytest.fixture(scope="session")
def gaussian_pair():
    return GaussianPair(k_max=20)
