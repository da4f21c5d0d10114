"""Cuadraturas gaussianas (app/services/quadrature.py)."""

import math

import numpy as np
import pytest

from app.core.errors import QuadratureError
from app.services.quadrature import (
    bump_rule,
    fixed_panels,
    gauss_laguerre,
    gauss_legendre,
    integrate,
    integrate_tail,
)


# ---------- reglas fijas ----------

def test_gauss_legendre_integra_polinomios_exacto():
    x, w = gauss_legendre(10)
    # orden 10 es exacto hasta grado 19
    assert np.sum(w * x ** 18) == pytest.approx(2.0 / 19.0, rel=1e-14)
    assert np.sum(w) == pytest.approx(2.0, rel=1e-15)


def test_gauss_legendre_es_de_solo_lectura():
    x, _ = gauss_legendre(12)
    with pytest.raises(ValueError):
        x[0] = 0.0


def test_gauss_laguerre_generalizada():
    x, w = gauss_laguerre(20, 0.5)
    # ∫t^{1/2}e^{−t}t^k dt = Γ(k + 3/2)
    for k in (0, 3, 7):
        assert np.sum(w * x ** k) == pytest.approx(math.gamma(k + 1.5), rel=1e-12)
    assert not x.flags.writeable


def test_fixed_panels_coseno():
    assert fixed_panels(np.cos, np.linspace(0.0, math.pi / 2, 5)) == pytest.approx(1.0, abs=1e-15)


# ---------- adaptativa ----------

@pytest.mark.parametrize("fn,a,b,exact", [
    (lambda x: np.exp(-x ** 2), -8.0, 8.0, math.sqrt(math.pi)),
    (lambda x: np.sqrt(np.abs(x)), 0.0, 1.0, 2.0 / 3.0),
    (lambda x: np.sin(40.0 * x), 0.0, math.pi, 0.0),
])
def test_integrate_contra_valores_exactos(fn, a, b, exact):
    assert integrate(fn, a, b, tol=1e-12) == pytest.approx(exact, abs=1e-10)


def test_integrate_respeta_los_saltos():
    step = lambda x: np.where(x > 0.3, 1.0, 0.0)
    assert integrate(step, 0.0, 1.0, breakpoints=(0.3,), tol=1e-14) == pytest.approx(0.7, abs=1e-14)


def test_integrate_intervalo_vacio_da_cero():
    assert integrate(np.exp, 1.0, 1.0) == 0.0
    assert integrate(np.exp, 2.0, 1.0) == 0.0


def test_integrate_tolerancia_relativa():
    value = integrate(lambda x: 1e8 * np.exp(-x), 0.0, 40.0, tol=1e-300, rel_tol=1e-13)
    assert value == pytest.approx(1e8 * (1.0 - math.exp(-40.0)), rel=1e-12)


def test_integrate_sin_convergencia_dice_donde():
    with pytest.raises(QuadratureError) as exc:
        integrate(lambda x: 1.0 / np.abs(x - 0.5) ** 0.99, 0.0, 1.0, tol=1e-14, max_panels=60)
    assert exc.value.code == "QUADRATURE"
    assert any(abs(p - 0.5) < 0.1 for p in exc.value.where)


# ---------- colas ----------

def test_integrate_tail_oscilante():
    # ∫₀^∞ e^{−x} cos x dx = 1/2
    value = integrate_tail(lambda x: np.exp(-x) * np.cos(x), 0.0, 4.0, tol=1e-15)
    assert value == pytest.approx(0.5, abs=1e-13)


def test_integrate_tail_sin_decaimiento_explota():
    with pytest.raises(QuadratureError):
        integrate_tail(np.cos, 0.0, 1.0, max_end=50.0)


# ---------- regla del bump ----------

def test_bump_rule_queda_en_el_soporte():
    t, w = bump_rule(1.0, 3.0)
    assert np.all((t > 1.0) & (t < 3.0))
    assert np.all(w > 0)
    # la regla cubre |u| ≤ 1 − 2⁻⁶
    assert np.sum(w) == pytest.approx(2.0 * (1.0 - 2.0 ** -6), rel=1e-13)


def test_bump_rule_parte_mas_con_frecuencia_alta():
    slow, _ = bump_rule(1.0, 3.0, 0.0)
    fast, _ = bump_rule(1.0, 3.0, 500.0)
    assert len(fast) > len(slow)
