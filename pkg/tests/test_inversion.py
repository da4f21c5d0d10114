"""Inversión de momentos, certificado de Cauchy–Schwarz y reconstrucción 1-D."""

import math

import numpy as np
import pytest

from app.core.errors import MonotonicityError
from app.enums.trace_source import MomentSource
from app.enums.verdict import Verdict
from app.services.inversion import (
    DistributionFunction,
    LevelBasis,
    coarea_densities,
    cs_certificate,
    distribution_to_profile,
    estimate_peak,
    invert_moments,
    layer_design,
    level_grid,
    locate_peak,
    moments_to_distribution,
    oracle_densities,
    reconstruct_field_1d,
)
from app.services.moments import MomentTable, direct_moments
from app.services.potentials import make_gaussian_profile, radialize


def _table(M, N=None, n: int = 1, start: int = 1) -> MomentTable:
    ks = tuple(range(start, start + len(M)))
    N = tuple(N) if N is not None else tuple(0.0 for _ in M)
    return MomentTable(n, ks, tuple(M), N, MomentSource.DIRECT_ORACLE)


@pytest.fixture(scope="module")
def gaussian_table(gaussian_field):
    return direct_moments(gaussian_field, range(1, 14))


@pytest.fixture(scope="module")
def gaussian_distribution(gaussian_table):
    return moments_to_distribution(gaussian_table)


# ---------- pico ----------

@pytest.mark.parametrize("amplitude", [1.0, 2.5])
def test_pico_desde_cocientes(amplitude):
    M = [amplitude ** k * math.sqrt(math.pi / k) for k in range(1, 14)]
    assert estimate_peak(_table(M)) == pytest.approx(amplitude, rel=1e-10)


def test_pico_en_3d():
    M = [(math.pi / k) ** 1.5 for k in range(3, 16)]
    assert estimate_peak(_table(M, n=3, start=3)) == pytest.approx(1.0, rel=1e-10)


def test_pico_de_la_tabla_nula():
    assert estimate_peak(_table([0.0] * 7)) == 0.0


def test_grilla_de_niveles():
    grid = level_grid(2.0, nodes=50, smin_fraction=1e-2)
    assert grid[0] == pytest.approx(0.02) and grid[-1] == pytest.approx(2.0)
    assert np.allclose(np.diff(np.log(grid)), np.log(100.0) / 49)
    with pytest.raises(ValueError):
        level_grid(0.0)


# ---------- función de distribución ----------

def _synthetic_moments(coefficients, ks, alpha: float = 0.5):
    """M_k de m(u) = Σc_j·u^α(1 − e^{−u})^j con P = 1, por la suma binomial cerrada."""
    out = []
    for k in ks:
        total = 0.0
        for j, c in enumerate(coefficients):
            total += c * sum(math.comb(j, i) * (-1) ** i * (k + i) ** -(alpha + 1.0) for i in range(j + 1))
        out.append(k * math.gamma(alpha + 1.0) * total)
    return out


def test_base_de_niveles_crece_y_transforma_en_forma_cerrada():
    basis = LevelBasis(1, 1.0, order=3)
    u = np.linspace(0.01, 8.0, 200)
    values = basis.values(u)
    assert np.all(values >= 0) and np.all(np.diff(values, axis=0) > 0)
    assert np.all(basis.slopes(u) > 0)
    # pendiente contra diferencias centradas
    step = 1e-6
    centered = (basis.values(u + step) - basis.values(u - step)) / (2.0 * step)
    assert basis.slopes(u) == pytest.approx(centered, rel=1e-6)
    ks = [1, 4, 13]
    for j in range(4):
        unit = [0.0] * j + [1.0]
        exact = [m / k for m, k in zip(_synthetic_moments(unit, ks), ks)]
        assert basis.laplace(np.array(ks, dtype=float))[:, j] == pytest.approx(exact, rel=1e-10)


def test_inversion_de_una_distribucion_sintetica():
    coefficients = [1.5, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0]
    ks = list(range(1, 14))
    basis = LevelBasis(1, 1.0)
    # momentos exactos: sin regularizar, la vuelta es exacta
    found, residuals = invert_moments(layer_design(basis, ks), _synthetic_moments(coefficients, ks), tikhonov=0.0)
    assert np.all(found >= 0)
    assert np.max(np.abs(residuals)) < 1e-8
    s = np.linspace(0.05, 0.95, 181)
    u = basis.depth(s)
    exact = basis.values(u) @ np.array(coefficients)
    assert np.max(np.abs(basis.values(u) @ found - exact)) < 1e-3


def test_distribucion_gaussiana(gaussian_distribution):
    dist = gaussian_distribution
    assert dist.peak == pytest.approx(1.0, rel=1e-8)
    assert np.max(np.abs(dist.residuals)) < 1e-8
    assert not dist.ill_posed
    s = np.linspace(0.05, 0.95, 181)
    assert np.max(np.abs(dist(s) - 2.0 * np.sqrt(np.log(1.0 / s)))) <= 1e-3
    assert dist(math.exp(-1.0)) == pytest.approx(2.0, abs=1e-3)
    assert dist(2.0) == 0.0
    assert dist.values[-1] == 0.0 and np.all(np.diff(dist.values) < 0)
    assert np.all(dist.density()[:-1] > 0)


def test_distribucion_gaussiana_en_3d(gaussian_field_3d):
    dist = moments_to_distribution(direct_moments(gaussian_field_3d, range(3, 16)))
    s = np.linspace(0.05, 0.95, 91)
    exact = 4.0 * math.pi / 3.0 * np.log(1.0 / s) ** 1.5
    assert np.max(np.abs(dist(s) - exact)) <= 1e-3


def test_distribucion_escala_con_la_amplitud(gaussian_table):
    doubled = _table([2.0 ** k * m for k, m in zip(gaussian_table.ks, gaussian_table.M)])
    dist = moments_to_distribution(doubled)
    assert dist.peak == pytest.approx(2.0, rel=1e-8)
    assert dist(1.0) == pytest.approx(2.0 * math.sqrt(math.log(2.0)), abs=1e-3)


def test_filas_inciertas_pesan_menos(gaussian_table):
    # un M₁ corrido 1 % con su incertidumbre declarada no arrastra la inversión
    M = list(gaussian_table.M)
    M[0] *= 1.01
    residuals = [0.02 * M[0]] + [0.0] * (len(M) - 1)
    table = MomentTable(1, gaussian_table.ks, tuple(M), gaussian_table.N, MomentSource.FITTED, tuple(residuals))
    dist = moments_to_distribution(table)
    s = np.linspace(0.05, 0.95, 91)
    assert np.max(np.abs(dist(s) - 2.0 * np.sqrt(np.log(1.0 / s)))) <= 1e-3
    assert not dist.ill_posed


def test_distribucion_nula():
    dist = moments_to_distribution(_table([0.0] * 7))
    assert dist.peak == 0.0
    assert np.all(dist.values == 0.0)
    assert not dist.ill_posed


@pytest.mark.parametrize("M,start", [
    ([1.0] * 6, 1),
    ([1.0] * 7, 2),
])
def test_distribucion_necesita_siete_momentos_desde_n(M, start):
    with pytest.raises(ValueError):
        moments_to_distribution(_table(M, start=start))


# ---------- densidades y certificado ----------

def test_certificado_del_oraculo_trasladado(translated_field):
    densities = oracle_densities(translated_field, np.linspace(0.05, 0.95, 40))
    certificate = cs_certificate(densities)
    assert certificate.verdict == Verdict.RADIAL_CONSISTENT
    assert certificate.sup_defect < 1e-10


def test_certificado_del_oraculo_asimetrico(asymmetric_field):
    densities = oracle_densities(asymmetric_field, np.linspace(0.05, 0.95, 40), threads=2)
    certificate = cs_certificate(densities)
    assert certificate.verdict == Verdict.NON_RADIAL
    assert certificate.sup_defect > 0.1
    # Cauchy–Schwarz: a·b ≥ card² ≥ 4
    assert certificate.min_gap > -1e-10
    assert densities.perimeter.max() == 4.0


def test_certificado_3d(gaussian_field_3d):
    densities = oracle_densities(gaussian_field_3d, np.linspace(0.05, 0.95, 20))
    assert cs_certificate(densities).sup_defect < 1e-10


def test_certificado_necesita_niveles(translated_field):
    densities = oracle_densities(translated_field, np.linspace(0.1, 0.9, 5))
    with pytest.raises(ValueError):
        cs_certificate(densities)


def test_densidades_invertidas(gaussian_distribution, gaussian_table):
    densities = coarea_densities(gaussian_distribution, gaussian_table)
    assert len(densities.levels) == len(gaussian_distribution.levels) - 2
    assert np.all(densities.a >= 0) and np.all(densities.b >= 0)
    assert np.all(densities.reference == 2.0)
    # gaussiana: a = 1/(s·√ln(1/s)), b = 4s·√ln(1/s)
    s = math.exp(-1.0)
    assert np.interp(s, densities.levels, densities.a) == pytest.approx(math.e, rel=1e-3)
    assert np.interp(s, densities.levels, densities.b) == pytest.approx(4.0 / math.e, rel=1e-3)
    certificate = cs_certificate(densities)
    assert certificate.verdict == Verdict.RADIAL_CONSISTENT
    assert certificate.sup_defect <= 1e-3


def test_densidades_invertidas_del_trasladado(translated_field):
    table = direct_moments(translated_field, range(1, 14))
    densities = coarea_densities(moments_to_distribution(table), table)
    certificate = cs_certificate(densities)
    assert certificate.verdict == Verdict.RADIAL_CONSISTENT
    assert certificate.sup_defect <= 1e-3


def test_densidades_invertidas_en_3d(gaussian_field_3d):
    table = direct_moments(gaussian_field_3d, range(3, 16))
    densities = coarea_densities(moments_to_distribution(table), table)
    assert cs_certificate(densities).sup_defect <= 1e-3


# ---------- perfil ----------

@pytest.mark.parametrize("n", [1, 3])
def test_perfil_desde_distribucion_analitica(n):
    levels = np.geomspace(1e-3, 1.0, 400)
    depth = np.log(1.0 / levels)
    if n == 1:
        mu = 2.0 * np.sqrt(depth)
    else:
        mu = 4.0 * math.pi / 3.0 * depth ** 1.5
    mu[-1] = 0.0
    dist = DistributionFunction(n, levels, mu, 1.0, np.zeros(1))
    profile = distribution_to_profile(dist)
    r = np.linspace(0.0, 2.5, 60)
    # ln s es recta en r², la interpolación monótona la reproduce
    assert profile.evaluate(r) == pytest.approx(np.exp(-r ** 2), abs=1e-9)
    assert profile.derivative(r) == pytest.approx(-2.0 * r * np.exp(-r ** 2), abs=1e-8)
    assert profile.max_value == pytest.approx(1.0)
    # cola más allá del último radio tabulado
    assert profile.evaluate(np.array([3.5])) == pytest.approx(np.exp(-12.25), rel=1e-6)


def test_perfil_exige_monotonia():
    levels = np.linspace(0.1, 1.0, 6)
    dist = DistributionFunction(1, levels, np.array([2.0, 1.5, 1.5, 1.0, 0.5, 0.0]), 1.0, np.zeros(1))
    with pytest.raises(MonotonicityError):
        distribution_to_profile(dist)


# ---------- reconstrucción ----------

def test_ubica_el_pico_trasladado(translated_field):
    assert locate_peak(translated_field) == pytest.approx(2.0, abs=1e-6)


def test_reconstruccion_exacta_del_trasladado(gaussian_profile, translated_field):
    result = reconstruct_field_1d(gaussian_profile, translated_field)
    assert result.x0 == pytest.approx(2.0, abs=1e-6)
    assert result.sup_error < 1e-6
    assert result.as_dict()["x0"] == result.x0


def test_reconstruccion_con_amplitud_equivocada(translated_field):
    wrong = make_gaussian_profile(1.1, 1.0)
    result = reconstruct_field_1d(wrong, translated_field)
    assert result.sup_error >= 5e-3


def test_reconstruccion_solo_en_1d(gaussian_profile):
    with pytest.raises(ValueError):
        reconstruct_field_1d(gaussian_profile, radialize(gaussian_profile, 3))


def test_reconstruccion_desde_los_momentos_del_trasladado(translated_field):
    table = direct_moments(translated_field, range(1, 14))
    profile = distribution_to_profile(moments_to_distribution(table))
    result = reconstruct_field_1d(profile, translated_field)
    assert result.x0 == pytest.approx(2.0, abs=1e-4)
    assert result.sup_error <= 1e-3
