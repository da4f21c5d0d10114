"""Lado directo, fase de dispersión y ajuste en h."""

import math

import numpy as np
import pytest

from app.core.errors import BoundaryTooCoarseError, IllConditionedFitError
from app.enums.trace_source import TraceSource
from app.services.resonances import make_problem
from app.services.testfns import BumpSpec, build_pair
from app.services.trace import (
    born_phase,
    direct_leading,
    direct_subleading,
    fit_coefficients,
    scattering_phase,
    spectral_shift_trace,
    trace_at,
    trace_report,
    wkb_phase,
    wkb_switch,
)


def _gaussian_leading_series(terms: int = 40) -> float:
    # √π∫(e^{−V} − 1)dx con V = e^{−x²}
    return math.pi * sum((-1) ** k / (math.factorial(k) * math.sqrt(k)) for k in range(1, terms))


def _gaussian_subleading_series(terms: int = 40) -> float:
    # −√π∫V'²e^{−V}dx
    return -2.0 * math.pi * sum((-1) ** j / (math.factorial(j) * (j + 2) ** 1.5) for j in range(terms))


# ---------- lado directo ----------

def test_lado_directo_gaussiano_en_serie(gaussian_field, gaussian_pair):
    assert direct_leading(gaussian_field, gaussian_pair, tol=1e-13) == pytest.approx(
        _gaussian_leading_series(), rel=1e-10
    )
    assert direct_subleading(gaussian_field, gaussian_pair, tol=1e-13) == pytest.approx(
        _gaussian_subleading_series(), rel=1e-10
    )


def test_lado_directo_radial_3d(gaussian_field_3d, gaussian_pair):
    # π^{3/2}∫(e^{−V} − 1)dx con ∫e^{−k|x|²} = (π/k)^{3/2}
    expected = math.pi ** 3 * sum((-1) ** k / (math.factorial(k) * k ** 1.5) for k in range(1, 40))
    assert direct_leading(gaussian_field_3d, gaussian_pair, tol=1e-13) == pytest.approx(expected, rel=1e-9)


def test_lado_directo_sin_potencial(zero_field, bump_pair):
    assert direct_leading(zero_field, bump_pair) == 0.0
    assert direct_subleading(zero_field, bump_pair) == 0.0


def test_lado_directo_invariante_por_traslacion(gaussian_field, translated_field, gaussian_pair):
    for invariant in (direct_leading, direct_subleading):
        centered = invariant(gaussian_field, gaussian_pair, tol=1e-13)
        assert invariant(translated_field, gaussian_pair, tol=1e-13) == pytest.approx(centered, rel=1e-10)


def test_debil_acoplamiento_es_lineal(gaussian_field, gaussian_pair):
    # I₁(εV) ≈ −ε·√π∫V para ε chico
    eps = 1e-6
    value = direct_leading(gaussian_field.scaled(eps), gaussian_pair, tol=1e-15)
    assert value == pytest.approx(-eps * math.pi, rel=1e-5)


# ---------- fase ----------

def test_wkb_y_born_coinciden_a_alta_frecuencia(gaussian_field):
    lams = np.array([40.0, 80.0])
    wkb = wkb_phase(gaussian_field, 1.0, lams)
    born = born_phase(gaussian_field, 1.0, lams)
    assert wkb == pytest.approx(born, rel=1e-3)


def test_corte_wkb(gaussian_field, barrier_field, zero_field):
    assert wkb_switch(gaussian_field, 1.0) == pytest.approx(32.0)
    assert wkb_switch(gaussian_field, 0.01) == pytest.approx(6.0)
    assert math.isinf(wkb_switch(barrier_field, 1.0))
    assert math.isinf(wkb_switch(zero_field, 1.0))


def test_fase_necesita_grilla_creciente(gaussian_field):
    problem = make_problem(gaussian_field, 1.0)
    with pytest.raises(ValueError):
        scattering_phase(problem, np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        scattering_phase(problem, np.array([0.0, 1.0]))


@pytest.mark.slow
def test_fase_continua_a_traves_del_corte(gaussian_field):
    problem = make_problem(gaussian_field, 1.0)
    lams = np.linspace(16.0, 64.0, 193)
    theta = scattering_phase(problem, lams)
    # el corte está en λ = 32
    assert np.max(np.abs(np.diff(theta))) < 0.01
    assert abs(theta[-1]) < 0.1


def test_traza_sin_potencial_es_cero(zero_field, bump_pair):
    assert spectral_shift_trace(make_problem(zero_field, 1.0), bump_pair) == 0.0


# ---------- ajuste ----------

def test_ajuste_recupera_coeficientes_sinteticos():
    hs = 2.0 ** -np.arange(6)
    values = 1.5 + 0.25 * hs ** 2 - 0.1 * hs ** 4
    fit = fit_coefficients(hs, values)
    assert fit.c0 == pytest.approx(1.5, rel=1e-12)
    assert fit.c2 == pytest.approx(0.25, rel=1e-10)
    assert fit.c4 == pytest.approx(-0.1, rel=1e-8)
    assert max(abs(r) for r in fit.residuals) < 1e-13
    assert fit.stability < 1e-9


def test_estabilidad_del_ajuste_con_termino_de_orden_seis():
    hs = 2.0 ** -np.arange(6)
    values = 1.5 + 0.25 * hs ** 2 - 0.1 * hs ** 4 + 0.05 * hs ** 6
    fit = fit_coefficients(hs, values)
    assert fit.c0 == pytest.approx(1.5, rel=1e-2)
    # sacar el h más chico mueve poco c₀ y c₂, pero algo
    assert 1e-12 < fit.stability < 0.1
    assert fit_coefficients(hs[:4], values[:4]).stability is None


def test_ajuste_mal_condicionado():
    hs = 1.0 + np.array([0.0, 1e-9, 2e-9, 3e-9])
    with pytest.raises(IllConditionedFitError) as exc:
        fit_coefficients(hs, np.ones(4))
    assert exc.value.condition > 1e8


def test_ajuste_necesita_cuatro_puntos():
    with pytest.raises(ValueError):
        fit_coefficients([1.0, 0.5, 0.25], [1.0, 1.0, 1.0])


# ---------- barrido ----------

@pytest.mark.slow
def test_fila_sin_resonancias_usa_la_fase(gaussian_field, bump_pair):
    row = trace_at(gaussian_field, bump_pair, 1.0)
    assert row.source == TraceSource.SPECTRAL_SHIFT
    assert row.resonance is None
    assert row.scaled(1) == pytest.approx(2.0 * math.pi * row.spectral_shift)


@pytest.mark.slow
def test_resonancias_contra_fase_de_dispersion(gaussian_field):
    pair = build_pair(BumpSpec(4.0, 6.0), k_max=20)
    row = trace_at(gaussian_field, pair, 1.0, resonance_min_h=0.5)
    assert row.resonance is not None
    assert abs(row.resonance - row.spectral_shift) <= max(10.0 * row.resonance_bound, 1e-5)


@pytest.mark.slow
def test_fallo_de_resonancias_no_se_reemplaza_por_la_fase(gaussian_field, monkeypatch):
    import app.services.trace as trace_module

    def falla(*args, **kwargs):
        raise BoundaryTooCoarseError("borde sin resolver")

    monkeypatch.setattr(trace_module, "find_resonances", falla)
    pair = build_pair(BumpSpec(4.0, 6.0), k_max=20)
    with pytest.raises(BoundaryTooCoarseError):
        trace_at(gaussian_field, pair, 1.0, resonance_min_h=0.5)
    # sin pedir el lado de resonancias no se toca la búsqueda
    row = trace_at(gaussian_field, pair, 1.0, resonance_min_h=None)
    assert row.source == TraceSource.SPECTRAL_SHIFT


@pytest.mark.slow
def test_ajuste_semiclasico_contra_lado_directo(gaussian_field, bump_pair):
    hs = [0.5, 0.25, 0.125, 0.0625, 0.03125]
    report = trace_report(gaussian_field, bump_pair, hs, threads=2)
    assert report.fit is not None
    assert report.fit.c0 == pytest.approx(report.direct_leading, rel=1e-3)
    assert report.fit.c2 == pytest.approx(report.expected_c2, rel=5e-2)
    assert report.fit.stability < 0.1
