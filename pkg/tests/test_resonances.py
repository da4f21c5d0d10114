"""Wronskiano de Jost, conteo por principio del argumento y suma de resonancias."""

import cmath
import math

import numpy as np
import pytest

from app.core.config import settings
from app.services.resonances import (
    Resonance,
    ResonanceSet,
    Window,
    count_zeros,
    default_window,
    find_resonances,
    make_problem,
    resonance_sum,
    resonance_term,
    square_barrier_wronskian,
    threshold_term,
    wronskian,
)


def _barrier_root(start: complex, h: float = 1.0) -> complex:
    """Newton sobre la forma cerrada de la barrera (altura 1 en [0, 1])."""
    z = start
    for _ in range(40):
        w = square_barrier_wronskian(1.0, 0.0, 1.0, h, z)
        d = 1e-7 * (1.0 + abs(z))
        slope = (
            square_barrier_wronskian(1.0, 0.0, 1.0, h, z + d) - square_barrier_wronskian(1.0, 0.0, 1.0, h, z - d)
        ) / (2.0 * d)
        step = w / slope
        z -= step
        if abs(step) < 1e-13:
            break
    return z


# ---------- Wronskiano ----------

@pytest.mark.parametrize("lam", [1.0 - 0.5j, -2.5 - 1.0j, 0.3 - 0.01j, 7.0 - 3.0j])
def test_wronskiano_libre(zero_field, lam):
    problem = make_problem(zero_field, 0.5)
    assert wronskian(problem, lam) == pytest.approx(-2j * lam / 0.5, rel=1e-12)


@pytest.mark.parametrize("h", [1.0, 0.25])
@pytest.mark.parametrize("lam", [0.5 - 0.2j, 2.0 - 1.0j, -3.0 - 2.5j, 1.2 + 0.4j])
def test_wronskiano_de_la_barrera_contra_forma_cerrada(barrier_field, h, lam):
    problem = make_problem(barrier_field, h)
    exact = square_barrier_wronskian(1.0, 0.0, 1.0, h, lam)
    assert abs(wronskian(problem, lam) - exact) <= 1e-7 * abs(exact)


def test_wronskiano_no_se_evalua_en_el_umbral(barrier_field):
    with pytest.raises(ValueError):
        wronskian(make_problem(barrier_field, 1.0), 0.0)


def test_problema_rechaza_h_y_dimension(barrier_field, gaussian_field_3d):
    with pytest.raises(ValueError):
        make_problem(barrier_field, 0.0)
    with pytest.raises(ValueError):
        make_problem(gaussian_field_3d, 1.0)


# ---------- ventanas ----------

@pytest.mark.parametrize("bounds", [
    (1.0, 0.0, -1.0, -0.1),
    (0.0, 1.0, -1.0, 0.5),
    (0.0, 1.0, -1.0, -2.0),
])
def test_ventana_invalida(bounds):
    with pytest.raises(ValueError):
        Window(*bounds)


def test_ventana_recortada_y_partida():
    window = Window(-4.0, 4.0, -2.0, 0.0)
    clipped = window.clipped()
    assert clipped.im_max == -settings.THRESHOLD_RADIUS
    left, right = window.split()
    assert left.re_max == right.re_min == 0.0
    assert window.contains(1.0 - 1.0j) and not window.contains(5.0 - 1.0j)


def test_ventana_por_defecto(bump_pair, gaussian_pair):
    window = default_window(bump_pair, 0.5)
    assert window.re_max == pytest.approx(24.0)
    assert window.im_max == -settings.THRESHOLD_RADIUS
    mass = bump_pair.fourier_moment(0)
    # lo que queda debajo del fondo aporta menos que la tolerancia
    assert mass * math.exp(window.im_min * 1.0) / (2.0 * math.pi) <= settings.WINDOW_TRUNCATION_TOL * (1 + 1e-12)
    with pytest.raises(ValueError):
        default_window(gaussian_pair, 0.5)


# ---------- conteo y búsqueda ----------

def test_sin_potencial_no_hay_ceros(zero_field):
    problem = make_problem(zero_field, 1.0)
    window = Window(-5.0, 5.0, -3.0, -0.01)
    assert count_zeros(problem, window) == 0
    found = find_resonances(problem, window)
    assert found.count == 0 and not found.truncated


@pytest.mark.slow
def test_resonancias_de_la_barrera(barrier_field):
    problem = make_problem(barrier_field, 1.0)
    window = Window(-10.0, 10.0, -6.5, -0.01)
    found = find_resonances(problem, window, threads=2)
    assert found.count == found.winding
    assert found.count >= 6
    for resonance in found.resonances:
        assert resonance.multiplicity == 1
        assert resonance.lam.imag < 0
        assert abs(resonance.lam - _barrier_root(resonance.lam)) < 1e-6
    # conjunto simétrico respecto del eje imaginario
    assert found.mirror_defect() < 1e-6


@pytest.mark.slow
def test_busqueda_truncada(barrier_field):
    problem = make_problem(barrier_field, 1.0)
    found = find_resonances(problem, Window(-10.0, 10.0, -6.5, -0.01), max_count=1)
    assert found.count == 1
    assert found.truncated


#: Cero antiligado de la barrera (altura 1, ancho 1, h = 1) sobre el eje imaginario.
ANTIBOUND = -0.624109j


def test_cero_sobre_el_borde_se_cuenta_corriendo_la_ventana(barrier_field):
    problem = make_problem(barrier_field, 1.0)
    assert count_zeros(problem, Window(0.0, 2.0, -1.0, -1e-3)) == 1


def test_cero_antiligado_de_la_barrera(barrier_field):
    problem = make_problem(barrier_field, 1.0)
    found = find_resonances(problem, Window(0.0, 2.0, -1.0, -1e-3))
    assert found.count == 1
    (resonance,) = found.resonances
    assert abs(resonance.lam.real) < 1e-6
    assert resonance.lam.imag == pytest.approx(ANTIBOUND.imag, abs=1e-5)
    assert abs(resonance.lam - _barrier_root(resonance.lam)) < 1e-8


def test_corte_sobre_un_cero_se_corre(barrier_field):
    # el primer corte de esta ventana cae justo en Re = 0
    problem = make_problem(barrier_field, 1.0)
    found = find_resonances(problem, Window(-1.0, 1.0, -1.0, -1e-3))
    assert found.count == found.winding == 1
    assert found.resonances[0].lam == pytest.approx(ANTIBOUND, abs=1e-5)


def test_covarianza_en_h(barrier_field):
    # −h²u'' + Vu = λ²u es −u'' + (V/h²)u = (λ/h)²u
    h = 0.5
    semiclassical = find_resonances(make_problem(barrier_field.scaled(h * h), h), Window(-0.5, 0.75, -0.5, -0.005))
    unit = find_resonances(make_problem(barrier_field, 1.0), Window(-1.0, 1.5, -1.0, -0.01))
    assert semiclassical.count == unit.count >= 1
    assert semiclassical.lambdas == pytest.approx(h * unit.lambdas, abs=1e-7)


@pytest.mark.slow
def test_wronskiano_no_depende_del_intervalo_de_truncado(gaussian_field):
    short = make_problem(gaussian_field, 1.0)
    # V < tol·max V fuera de L ~ √ln(1/tol): tol⁴ duplica L
    long = make_problem(gaussian_field, 1.0, truncation_tol=settings.SUPPORT_TOL ** 4)
    assert long.width > 1.9 * short.width
    for lam in (1.0 - 0.5j, 2.5 - 1.0j, -0.7 - 0.2j):
        assert abs(wronskian(long, lam) - wronskian(short, lam)) <= 1e-7 * abs(wronskian(short, lam))
    window = Window(-3.0, 3.0, -2.0, -0.01)
    assert count_zeros(long, window) == count_zeros(short, window)


@pytest.mark.parametrize("lam", [1.3 - 0.4j, 0.2 - 2.0j, 4.0 - 0.05j])
def test_simetria_espejo_del_wronskiano(barrier_field, asymmetric_field, lam):
    for field_ in (barrier_field, asymmetric_field):
        problem = make_problem(field_, 0.5)
        mirrored = wronskian(problem, -lam.conjugate())
        assert mirrored == pytest.approx(wronskian(problem, lam).conjugate(), rel=1e-9)


def test_raiz_cerrada_de_la_barrera_cae_donde_se_espera():
    # rama m = 3 de κ = πm − i·Log((k+κ)/(k−κ)), k = √(κ²+1); punto fijo contractivo
    kappa = complex(3.0 * math.pi, -math.log(36.0 * math.pi ** 2))
    for _ in range(200):
        k = cmath.sqrt(kappa * kappa + 1.0)
        kappa = 3.0 * math.pi - 1j * cmath.log((k + kappa) / (k - kappa))
    root = _barrier_root(cmath.sqrt(kappa * kappa + 1.0))
    assert abs(square_barrier_wronskian(1.0, 0.0, 1.0, 1.0, root)) < 1e-10 * abs(
        square_barrier_wronskian(1.0, 0.0, 1.0, 1.0, root + 0.1)
    )
    assert -7.0 < root.imag < -5.0
    # una sola vuelta de la fase alrededor de un cuadrado centrado en la raíz
    side = np.linspace(-0.25, 0.25, 401)
    loop = np.concatenate([
        root + side - 0.25j,
        root + 0.25 + 1j * side,
        root - side + 0.25j,
        root - 0.25 - 1j * side,
    ])
    values = np.array([square_barrier_wronskian(1.0, 0.0, 1.0, 1.0, z) for z in loop])
    turns = np.sum(np.angle(values[1:] / values[:-1])) / (2.0 * math.pi)
    assert round(turns) == 1


# ---------- suma ----------

def test_termino_real_es_la_masa(bump_pair):
    assert resonance_term(bump_pair, 0j) == pytest.approx(bump_pair.fourier_moment(0) / (2.0 * math.pi))


def test_suma_vacia(bump_pair):
    empty = ResonanceSet(h=1.0, window=Window(-3.0, 3.0, -4.0, -0.01))
    summed = resonance_sum(empty, bump_pair)
    assert summed.value == 0.0 and summed.imaginary == 0.0
    assert summed.bound > 0


def test_suma_de_un_par_simetrico_es_real(bump_pair):
    lam = 1.7 - 0.8j
    pair_set = ResonanceSet(
        h=1.0,
        window=Window(-3.0, 3.0, -4.0, -0.01),
        resonances=(Resonance(lam, 1, 0.0), Resonance(-lam.conjugate(), 1, 0.0)),
    )
    summed = resonance_sum(pair_set, bump_pair)
    assert abs(summed.imaginary) < 1e-15
    assert summed.value == pytest.approx(2.0 * resonance_term(bump_pair, lam).real)


def test_termino_de_umbral(bump_pair, zero_field, gaussian_field):
    assert threshold_term(bump_pair, zero_field) == 0.0
    assert threshold_term(bump_pair, gaussian_field) == pytest.approx(
        -bump_pair.fourier_moment(0) / (2.0 * math.pi)
    )
    assert threshold_term(bump_pair) == threshold_term(bump_pair, gaussian_field)

