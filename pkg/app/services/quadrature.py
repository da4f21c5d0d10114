"""
Cuadraturas gaussianas compartidas por todos los módulos numéricos.

Cuatro piezas:

- `integrate`: paneles compuestos con refinamiento adaptativo (se compara cada panel
  contra sus dos mitades y se parte lo que no converge). Vectorizado: el integrando
  recibe un arreglo de nodos y devuelve un arreglo.
- `integrate_tail`: integrales en [a, ∞) por bloques, con regla de parada sobre el
  tamaño del integrando en el último bloque.
- `bump_rule`: nodos y pesos fijos para integrar contra el bump de soporte [t₀, T],
  graduados geométricamente hacia los bordes, donde el bump es plano hasta 1e−14.
- `gauss_laguerre`: Gauss–Laguerre generalizada para ∫₀^∞ t^α e^{−t} φ(t) dt, la que usa la
  inversión de momentos para las transformadas de Laplace de su base.

Puro: sin E/S.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_genlaguerre

from app.core.errors import QuadratureError

logger = logging.getLogger(__name__)

Integrand = Callable[[np.ndarray], np.ndarray]

#: Fracción de u=(|t|−m)/hw que se integra. Más allá, exp(−1/(1−u²)) < 1.3e−14.
BUMP_CUTOFF_LEVELS = 6
#: Radianes de oscilación que se le piden como máximo a un panel de orden 30.
MAX_RADIANS_PER_PANEL = 8.0


@lru_cache(maxsize=64)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodos y pesos en [−1, 1]; cacheados y de solo lectura."""
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=16)
def gauss_laguerre(order: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodos y pesos para el peso t^α·e^{−t} en [0, ∞); cacheados y de solo lectura."""
    nodes, weights = roots_genlaguerre(order, alpha)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def panel_rule(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodos (P, order) y pesos (P, order) de la regla compuesta sobre `edges`."""
    x, w = gauss_legendre(order)
    edges = np.asarray(edges, dtype=float)
    left, right = edges[:-1, None], edges[1:, None]
    half = 0.5 * (right - left)
    return left + half * (x + 1.0), half * w


def fixed_panels(fn: Integrand, edges: Sequence[float], order: int = 20) -> float:
    nodes, weights = panel_rule(np.asarray(edges), order)
    values = np.asarray(fn(nodes.ravel())).reshape(nodes.shape)
    return float(np.sum(values * weights))


def _panel_values(fn: Integrand, left: np.ndarray, right: np.ndarray, order: int):
    """Valor grueso (un panel) y fino (dos mitades) de cada panel."""
    mid = 0.5 * (left + right)
    # Los paneles pendientes no son contiguos: los nodos se arman a mano.
    x, w = gauss_legendre(order)
    half = 0.5 * (right - left)[:, None]
    coarse_nodes = left[:, None] + half * (x + 1.0)
    coarse_weights = half * w
    qhalf = 0.5 * half
    fine_left = left[:, None] + qhalf * (x + 1.0)
    fine_right = mid[:, None] + qhalf * (x + 1.0)
    fine_weights = qhalf * w
    all_nodes = np.concatenate([coarse_nodes, fine_left, fine_right], axis=1)
    values = np.asarray(fn(all_nodes.ravel())).reshape(all_nodes.shape)
    n = len(x)
    coarse = np.sum(values[:, :n] * coarse_weights, axis=1)
    fine = np.sum(values[:, n:2 * n] * fine_weights, axis=1) + np.sum(
        values[:, 2 * n:] * fine_weights, axis=1
    )
    return coarse, fine


def integrate(
    fn: Integrand,
    a: float,
    b: float,
    *,
    breakpoints: Sequence[float] = (),
    tol: float = 1e-10,
    rel_tol: float = 0.0,
    order: int = 20,
    initial_panels: int = 8,
    max_panels: int = 20000,
) -> float:
    """
    ∫_a^b fn por paneles adaptativos de Gauss–Legendre.

    La tolerancia efectiva es max(tol, rel_tol·|valor|), repartida entre paneles por
    ancho. Los `breakpoints` dentro de (a, b) siempre son bordes de panel: ahí es donde
    V salta o deja de ser suave.
    """
    if b <= a:
        return 0.0
    cuts = sorted({a, b, *(p for p in breakpoints if a < p < b)})
    edges = np.concatenate(
        [np.linspace(lo, hi, initial_panels + 1)[:-1] for lo, hi in zip(cuts[:-1], cuts[1:])]
        + [np.array([b])]
    )
    left, right = edges[:-1], edges[1:]
    total = 0.0
    length = b - a
    panels_used = len(left)

    while len(left):
        coarse, fine = _panel_values(fn, left, right, order)
        estimate = total + float(np.sum(fine))
        budget = max(tol, rel_tol * abs(estimate))
        allowed = budget * (right - left) / length
        done = np.abs(fine - coarse) <= allowed
        total += float(np.sum(fine[done]))
        left, right = left[~done], right[~done]
        if not len(left):
            break
        panels_used += len(left)
        if panels_used > max_panels:
            raise QuadratureError(
                f"La cuadratura en [{a:.6g}, {b:.6g}] no convergió a {budget:.1e} "
                f"({len(left)} paneles sin converger)",
                where=tuple(0.5 * (left + right))[:8],
            )
        mid = 0.5 * (left + right)
        left, right = np.concatenate([left, mid]), np.concatenate([mid, right])
    return total


def integrate_tail(
    fn: Integrand,
    a: float,
    chunk: float,
    *,
    tol: float = 1e-13,
    order: int = 40,
    max_end: float = 1e4,
    quiet_chunks: int = 3,
) -> float:
    """
    ∫_a^∞ fn para integrandos oscilantes que decaen, por bloques de ancho `chunk`.

    Se para cuando el máximo de |fn| en `quiet_chunks` bloques seguidos queda por debajo
    de tol·(máximo visto). Si se llega a `max_end` sin parar, es QuadratureError.
    """
    x, w = gauss_legendre(order)
    total = 0.0
    peak = 0.0
    quiet = 0
    start = a
    while start < max_end:
        half = 0.5 * chunk
        nodes = start + half * (x + 1.0)
        values = np.asarray(fn(nodes))
        total += float(np.sum(values * w) * half)
        local = float(np.max(np.abs(values)))
        peak = max(peak, local)
        quiet = quiet + 1 if local <= tol * peak else 0
        if quiet >= quiet_chunks or peak == 0.0:
            return total
        start += chunk
    raise QuadratureError(
        f"La cola de la integral no decayó antes de {max_end:.6g}", where=(start,)
    )


def _omega_bucket(omega: float) -> int:
    """Frecuencias agrupadas por potencias de 2 para reutilizar la regla cacheada."""
    if omega <= 1.0:
        return 0
    return int(math.ceil(math.log2(omega)))


@lru_cache(maxsize=256)
def _bump_rule_cached(t0: float, T: float, bucket: int, order: int):
    m = 0.5 * (t0 + T)
    hw = 0.5 * (T - t0)
    omega = 0.0 if bucket == 0 else float(2 ** bucket)
    levels = [0.0] + [1.0 - 2.0 ** (-j) for j in range(1, BUMP_CUTOFF_LEVELS + 1)]
    u_edges = np.array(sorted({-u for u in levels} | set(levels)))
    edges: list[float] = [float(u_edges[0])]
    for lo, hi in zip(u_edges[:-1], u_edges[1:]):
        pieces = max(1, int(math.ceil(hw * (hi - lo) * omega / MAX_RADIANS_PER_PANEL)))
        edges.extend(np.linspace(lo, hi, pieces + 1)[1:].tolist())
    nodes, weights = panel_rule(np.array(edges), order)
    u = nodes.ravel()
    t = m + hw * u
    w = weights.ravel() * hw
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def bump_rule(t0: float, T: float, omega: float = 0.0, order: int = 30):
    """
    Regla (t, w) para ∫_{t₀}^{T} φ(t)dt con φ suave salvo por el factor bump.

    `omega` es la frecuencia máxima del factor oscilante que acompaña al bump (cos(tτ),
    J(t√v), e^{−itλ}); los paneles se parten para no pasar de MAX_RADIANS_PER_PANEL.
    """
    return _bump_rule_cached(float(t0), float(T), _omega_bucket(abs(omega)), order)
