"""
De momentos a potencial: función de distribución, densidades de coárea, certificado de
Cauchy–Schwarz, perfil radial y reconstrucción 1-D a lo largo de líneas de flujo.

Con s = P·e^{−u} (P = max V) la fórmula de capas queda como transformada de Laplace:

    M_k = ∫₀^∞ k·s^{k−1}·μ(s) ds = k·Pᵏ·∫₀^∞ e^{−ku}·m(u) du,       m(u) = μ(P·e^{−u})
    N_k = ∫₀^P sᵏ·b(s) ds        = P^{k+2}·∫₀^∞ e^{−(k+2)u}·β(u) du,  b(s) = s·β(u)

m y β se escriben en una base de funciones crecientes y no negativas de u con
coeficientes ≥ 0, así que μ sale no creciente por construcción y a, b salen no negativas
y en forma cerrada. μ se entrega tabulada en una grilla logarítmica de niveles.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import lsq_linear, minimize_scalar

from app.core.config import settings
from app.core.errors import DegenerateLevelError, MonotonicityError, SingularFlowError
from app.core.workers import run_parallel
from app.enums.verdict import Verdict
from app.services.moments import MomentTable
from app.services.potentials import (
    DEGENERATE_GRADIENT,
    InterpolatedProfile,
    PotentialField,
    RadialProfile,
    level_set_oracle,
    sphere_area,
    unit_ball_volume,
)
from app.services.quadrature import gauss_laguerre

logger = logging.getLogger(__name__)

#: Último j de la base u^{n/2}·(1 − e^{−u})^j.
BASIS_ORDER = 6
#: Nodos de Gauss–Laguerre para las transformadas de Laplace de la base.
LAPLACE_NODES = 128
#: Incertidumbre relativa de una fila por debajo de la cual pesa completa.
RESIDUAL_FLOOR = 1e-10
#: Densidad negativa admitida tras derivar.
NEGATIVE_DENSITY_TOL = 1e-8
#: Banda de niveles (fracción de max V) donde se evalúa el certificado.
CERTIFICATE_BAND = (0.05, 0.95)
MIN_CERTIFICATE_LEVELS = 10
#: Puntos de la grilla donde se compara la reconstrucción con el objetivo.
RECONSTRUCTION_POINTS = 2001
#: Distancia al pico, relativa al radio de truncación, donde arranca la línea de flujo.
FLOW_START_FRACTION = 1e-4
PEAK_XTOL = 1e-10


# ==== PICO ====

def estimate_peak(table: MomentTable) -> float:
    """
    max V a partir de los cocientes M_{k+1}/M_k.

    Para un máximo no degenerado M_k ~ c·Pᵏ·k^{−n/2}, así que el cociente corregido por
    ((k+1)/k)^{n/2} tiende a P con error O(1/k); se extrapola linealmente en 1/k.
    """
    ks = np.asarray(table.ks, dtype=float)
    M = np.asarray(table.M, dtype=float)
    if not np.any(M != 0):
        return 0.0
    if len(ks) < 2:
        raise ValueError("estimate_peak necesita al menos dos momentos")
    consecutive = np.nonzero(np.diff(ks) == 1)[0]
    consecutive = consecutive[(M[consecutive] > 0) & (M[consecutive + 1] > 0)]
    if not len(consecutive):
        raise ValueError("estimate_peak necesita momentos consecutivos positivos")
    k = ks[consecutive]
    ratios = M[consecutive + 1] / M[consecutive] * ((k + 1) / k) ** (0.5 * table.dimension)
    tail = slice(-min(4, len(ratios)), None)
    if len(ratios[tail]) < 2:
        return float(ratios[-1])
    slope, intercept = np.polyfit(1.0 / k[tail], ratios[tail], 1)
    peak = float(intercept) if intercept > 0 else float(np.max(ratios))
    logger.debug(f"Pico estimado {peak:.10g} (último cociente {ratios[-1]:.10g})")
    return peak


# ==== BASE DE NIVELES ====

@dataclass(frozen=True)
class LevelBasis:
    """
    φ_j(u) = u^α·(1 − e^{−u})^j, α = n/2, j = 0..order, en u = ln(P/s).

    Todas son no negativas y crecientes: con coeficientes ≥ 0, m(u) = Σc_j·φ_j(u) da una
    μ no creciente que se anula en el pico como (P − s)^{n/2}. La gaussiana e^{−|x|²} es
    exacta con j = 0: m = ω_n·u^{n/2}.
    """

    dimension: int
    peak: float
    order: int = BASIS_ORDER

    @property
    def alpha(self) -> float:
        return 0.5 * self.dimension

    def depth(self, s) -> np.ndarray:
        """u = ln(P/s), recortada a 0 por encima del pico."""
        return np.maximum(np.log(self.peak / np.asarray(s, dtype=float)), 0.0)

    def values(self, u) -> np.ndarray:
        """φ_j(u): una fila por u, una columna por j."""
        u = np.asarray(u, dtype=float)[..., None]
        j = np.arange(self.order + 1)
        return u ** self.alpha * (-np.expm1(-u)) ** j

    def slopes(self, u) -> np.ndarray:
        """dφ_j/du para u > 0."""
        u = np.asarray(u, dtype=float)[..., None]
        j = np.arange(self.order + 1)
        rise = -np.expm1(-u)
        lower = j * rise ** np.maximum(j - 1, 0)
        return u ** (self.alpha - 1.0) * rise ** j * self.alpha + u ** self.alpha * lower * np.exp(-u)

    def laplace(self, z) -> np.ndarray:
        """
        ∫₀^∞ e^{−zu}·φ_j(u) du, una fila por z.

        Con t = zu es z^{−(α+1)}·∫t^α e^{−t}(1 − e^{−t/z})^j dt; Gauss–Laguerre generalizada
        evita la cancelación de la suma binomial cuando z es grande.
        """
        z = np.asarray(z, dtype=float)
        t, w = gauss_laguerre(LAPLACE_NODES, self.alpha)
        rise = -np.expm1(-t[None, :] / z[:, None])
        columns = [(rise ** j) @ w for j in range(self.order + 1)]
        return np.column_stack(columns) * z[:, None] ** -(self.alpha + 1.0)


def layer_design(basis: LevelBasis, ks: Sequence[int]) -> np.ndarray:
    """Filas de M_k = k·Pᵏ·∫e^{−ku}·m(u) du."""
    ks = np.asarray(ks, dtype=float)
    return (ks * basis.peak ** ks)[:, None] * basis.laplace(ks)


def gradient_design(basis: LevelBasis, ks: Sequence[int]) -> np.ndarray:
    """Filas de N_k = P^{k+2}·∫e^{−(k+2)u}·β(u) du."""
    z = np.asarray(ks, dtype=float) + 2.0
    return (basis.peak ** z)[:, None] * basis.laplace(z)


def invert_moments(
    design: np.ndarray,
    moments: Sequence[float],
    *,
    uncertainties: Optional[Sequence[float]] = None,
    tikhonov: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Coeficientes c ≥ 0 con design·c ≈ moments (mínimos cuadrados acotados, BVLS).

    Cada fila va relativa a |moment| y pesa RESIDUAL_FLOOR/max(incertidumbre relativa,
    RESIDUAL_FLOOR), normalizado para que la más precisa pese 1. Tikhonov sobre los
    coeficientes de orden j ≥ 1 con columnas normalizadas; c₀ queda libre.
    Devuelve (c, residuos relativos por fila).
    """
    design = np.asarray(design, dtype=float)
    moments = np.asarray(moments, dtype=float)
    tikhonov = settings.TIKHONOV_WEIGHT if tikhonov is None else tikhonov
    columns = design.shape[1]
    if not np.any(moments != 0):
        return np.zeros(columns), np.zeros(len(moments))

    magnitude = np.where(moments != 0, np.abs(moments), np.max(np.abs(moments)))
    spread = np.zeros(len(moments)) if not uncertainties else np.abs(np.asarray(uncertainties, dtype=float))
    weights = RESIDUAL_FLOOR / np.maximum(spread / magnitude, RESIDUAL_FLOOR)
    weights = weights / np.max(weights)
    rows = design * (weights / magnitude)[:, None]
    norms = np.linalg.norm(rows, axis=0)
    norms[norms == 0] = 1.0
    penalty = math.sqrt(tikhonov) * np.eye(columns)[1:]
    system = np.vstack([rows / norms, penalty])
    target = np.concatenate([moments * weights / magnitude, np.zeros(columns - 1)])

    result = lsq_linear(system, target, bounds=(0.0, np.inf), method="bvls")
    if not result.success:
        logger.warning(f"lsq_linear no convergió: {result.message}")
    coefficients = result.x / norms
    residuals = (design @ coefficients - moments) / magnitude
    return coefficients, residuals


# ==== FUNCIÓN DE DISTRIBUCIÓN ====

@dataclass(frozen=True)
class DistributionFunction:
    dimension: int
    #: s₀ < … < s_m, con s_m = max V.
    levels: np.ndarray
    #: μ(s_i); μ(s_m) = 0.
    values: np.ndarray
    peak: float
    #: (M_k ajustado − M_k)/|M_k| por k.
    residuals: np.ndarray
    ill_posed: bool = False
    #: Coeficientes de m(u) en LevelBasis; vacío si μ solo se conoce en la grilla.
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def basis(self) -> Optional[LevelBasis]:
        if not len(self.coefficients):
            return None
        return LevelBasis(self.dimension, self.peak, len(self.coefficients) - 1)

    def __call__(self, s):
        basis = self.basis
        if basis is None:
            return np.interp(s, self.levels, self.values, left=self.values[0], right=0.0)
        s = np.maximum(np.asarray(s, dtype=float), self.levels[0])
        out = basis.values(basis.depth(s)) @ self.coefficients
        return out if out.ndim else float(out)

    def density(self) -> np.ndarray:
        """−μ′ en los nodos; con la base, a(s) = m′(u)/s (infinita en el pico si n = 1)."""
        basis = self.basis
        if basis is None:
            return -np.gradient(self.values, self.levels)
        u = basis.depth(self.levels)
        a = np.full(len(self.levels), np.inf if basis.alpha < 1 else 0.0)
        inside = u > 0
        a[inside] = basis.slopes(u[inside]) @ self.coefficients / self.levels[inside]
        return a

    def rows(self):
        a = self.density()
        return [(float(s), float(m), float(d)) for s, m, d in zip(self.levels, self.values, a)]


def level_grid(peak: float, nodes: Optional[int] = None, smin_fraction: Optional[float] = None) -> np.ndarray:
    """Grilla logarítmica en [smin_fraction·peak, peak]."""
    nodes = settings.INVERSION_NODES if nodes is None else nodes
    smin_fraction = settings.SMIN_FRACTION if smin_fraction is None else smin_fraction
    if not peak > 0:
        raise ValueError(f"El pico debe ser > 0 (llegó {peak})")
    return peak * np.geomspace(smin_fraction, 1.0, nodes)


def _excess(residuals: np.ndarray, moments: np.ndarray, uncertainties: Sequence[float]) -> float:
    """Mayor residuo absoluto que no cubre la incertidumbre propia de cada momento."""
    absolute = np.abs(residuals * moments)
    if uncertainties:
        absolute = np.maximum(absolute - np.abs(np.asarray(uncertainties, dtype=float)), 0.0)
    return float(np.max(absolute))


def moments_to_distribution(
    table: MomentTable,
    levels: Optional[np.ndarray] = None,
    *,
    peak: Optional[float] = None,
    tikhonov: Optional[float] = None,
) -> DistributionFunction:
    """μ(s) = vol({V > s}) a partir de M_k, k ∈ [n, K] con K ≥ n + 6."""
    n = table.dimension
    if len(table.ks) < 7 or table.ks[0] != n or max(table.ks) < n + 6:
        raise ValueError(f"Se necesitan momentos k ∈ [{n}, K] con K >= {n + 6} (llegó {table.ks})")
    M = np.asarray(table.M, dtype=float)
    if not np.any(M != 0):
        grid = np.geomspace(settings.SMIN_FRACTION, 1.0, 2) if levels is None else np.asarray(levels)
        zeros = np.zeros(len(grid))
        return DistributionFunction(n, grid, zeros, 0.0, np.zeros(len(M)))

    peak = estimate_peak(table) if peak is None else peak
    grid = level_grid(peak) if levels is None else np.asarray(levels, dtype=float)
    basis = LevelBasis(n, peak)
    coefficients, residuals = invert_moments(
        layer_design(basis, table.ks), M, uncertainties=table.m_residuals, tikhonov=tikhonov
    )
    mu = basis.values(basis.depth(grid)) @ coefficients

    excess = _excess(residuals, M, table.m_residuals)
    ill_posed = excess > settings.ILL_POSED_FRACTION * abs(table.moment(n))
    if ill_posed:
        logger.warning(
            f"Inversión mal planteada: residuo {excess:.3e} > "
            f"{settings.ILL_POSED_FRACTION:g}·M_{n}"
        )
    logger.info(f"μ invertida en {len(grid)} niveles hasta s={peak:.6g}; residuo máx {excess:.2e}")
    return DistributionFunction(n, grid, mu, float(peak), residuals, ill_posed, coefficients)


# ==== DENSIDADES DE COÁREA ====

@dataclass(frozen=True)
class CoareaDensities:
    dimension: int
    levels: np.ndarray
    #: a(s) = ∫_{V=s}|∇V|⁻¹dS
    a: np.ndarray
    #: b(s) = ∫_{V=s}|∇V|dS
    b: np.ndarray
    #: card(V⁻¹(s)) en 1-D o área del conjunto de nivel; en las densidades invertidas, la de referencia.
    perimeter: np.ndarray
    #: P₀(s) del candidato radial: 2 en 1-D, área de la esfera de volumen μ(s) en n ≥ 3.
    reference: np.ndarray
    peak: float = 0.0

    def rows(self):
        return [
            (float(s), float(a), float(b), float(p), float(p0))
            for s, a, b, p, p0 in zip(self.levels, self.a, self.b, self.perimeter, self.reference)
        ]


def _reference_perimeter(n: int, volumes: np.ndarray) -> np.ndarray:
    if n == 1:
        return np.full(len(volumes), 2.0)
    radii = (np.asarray(volumes) / unit_ball_volume(n)) ** (1.0 / n)
    return np.array([sphere_area(n, r) for r in radii])


def coarea_densities(
    distribution: DistributionFunction,
    table: MomentTable,
    *,
    tikhonov: Optional[float] = None,
) -> CoareaDensities:
    """
    a = −μ′ y b = s·β(u), con β invertida desde N_k en la misma base, en los nodos interiores.
    """
    n = distribution.dimension
    levels = distribution.levels
    basis = LevelBasis(n, distribution.peak)
    beta, _ = invert_moments(
        gradient_design(basis, table.ks), table.N, uncertainties=table.n_residuals, tikhonov=tikhonov
    )
    a = distribution.density()
    b = levels * (basis.values(basis.depth(levels)) @ beta)
    interior = slice(1, -1)
    a, b, levels = a[interior], b[interior], levels[interior]
    worst = float(min(np.min(a), np.min(b))) if len(a) else 0.0
    if worst < -NEGATIVE_DENSITY_TOL:
        raise MonotonicityError(f"Densidad negativa tras derivar ({worst:.3e})")
    reference = _reference_perimeter(n, distribution.values[interior])
    return CoareaDensities(n, levels, a, b, reference, reference, distribution.peak)


def oracle_densities(
    field_: PotentialField,
    levels: Sequence[float],
    *,
    threads: Optional[int] = None,
) -> CoareaDensities:
    """a, b y perímetro exactos desde el oráculo de conjuntos de nivel; los niveles críticos se saltan."""

    def at_level(s):
        try:
            return level_set_oracle(field_, float(s))
        except DegenerateLevelError as e:
            logger.debug(f"Nivel {e.level:.6g} omitido: {e.message}")
            return None

    found = [o for o in run_parallel(at_level, list(levels), threads) if o is not None]
    n = field_.dimension
    if n == 1:
        reference = np.full(len(found), 2.0)
    else:
        reference = np.array([sphere_area(n, o.radius) for o in found])
    return CoareaDensities(
        dimension=n,
        levels=np.array([o.level for o in found]),
        a=np.array([o.inverse_gradient_sum for o in found]),
        b=np.array([o.gradient_sum for o in found]),
        perimeter=np.array([o.perimeter for o in found]),
        reference=reference,
        peak=field_.max_value,
    )


# ==== CERTIFICADO ====

@dataclass(frozen=True)
class Certificate:
    levels: np.ndarray
    defects: np.ndarray
    verdict: Verdict
    tolerance: float

    @property
    def sup_defect(self) -> float:
        return float(np.max(np.abs(self.defects)))

    @property
    def min_gap(self) -> float:
        """min(a·b/P₀² − 1): negativo solo si se viola Cauchy–Schwarz."""
        return float(np.min(self.defects))

    def as_dict(self):
        return {
            "verdict": self.verdict.value,
            "tolerance": self.tolerance,
            "sup_defect": self.sup_defect,
            "levels": self.levels.tolist(),
            "defects": self.defects.tolist(),
        }


def cs_certificate(
    densities: CoareaDensities,
    *,
    tolerance: Optional[float] = None,
    band: Tuple[float, float] = CERTIFICATE_BAND,
) -> Certificate:
    """
    defect(s) = a(s)·b(s)/P₀(s)² − 1 en los niveles de la banda.

    RADIAL-CONSISTENT si sup|defect| ≤ tolerance. Un valor alto no es un error: es la
    respuesta esperada para un potencial no radial.
    """
    tolerance = settings.CS_TOLERANCE if tolerance is None else tolerance
    levels = np.asarray(densities.levels)
    peak = densities.peak if densities.peak > 0 else (float(np.max(levels)) if len(levels) else 0.0)
    keep = (levels >= band[0] * peak) & (levels <= band[1] * peak) & (densities.reference > 0)
    if np.count_nonzero(keep) < MIN_CERTIFICATE_LEVELS:
        raise ValueError(
            f"El certificado necesita al menos {MIN_CERTIFICATE_LEVELS} niveles "
            f"(hay {np.count_nonzero(keep)})"
        )
    defects = densities.a[keep] * densities.b[keep] / densities.reference[keep] ** 2 - 1.0
    sup = float(np.max(np.abs(defects)))
    verdict = Verdict.RADIAL_CONSISTENT if sup <= tolerance else Verdict.NON_RADIAL
    logger.info(f"Certificado: {verdict.value} (sup defecto {sup:.3e}, tolerancia {tolerance:g})")
    return Certificate(levels[keep], defects, verdict, tolerance)


# ==== PERFIL Y RECONSTRUCCIÓN ====

def distribution_to_profile(distribution: DistributionFunction, n: Optional[int] = None) -> InterpolatedProfile:
    """R⁻¹(s) = (μ(s)/ω_n)^{1/n}, interpolado de forma monótona."""
    n = distribution.dimension if n is None else n
    mu = np.asarray(distribution.values, dtype=float)
    if np.any(np.diff(mu) >= 0):
        raise MonotonicityError("μ debe decrecer estrictamente en su grilla")
    radii = (mu / unit_ball_volume(n)) ** (1.0 / n)
    return InterpolatedProfile(radii[::-1], np.asarray(distribution.levels)[::-1])


@dataclass(frozen=True)
class Reconstruction:
    x0: float
    sup_error: float
    grid: np.ndarray
    values: np.ndarray

    def as_dict(self):
        return {"x0": self.x0, "sup_error": self.sup_error}


def locate_peak(target: PotentialField) -> float:
    """argmax de V: muestreo y refinamiento por sección áurea."""
    a, b = target.truncation_interval()
    x = np.linspace(a, b, RECONSTRUCTION_POINTS)
    i = int(np.argmax(target.evaluate(x)))
    lo, hi = x[max(i - 1, 0)], x[min(i + 1, len(x) - 1)]
    if hi <= lo:
        return float(x[i])
    result = minimize_scalar(
        lambda t: -float(target.evaluate(np.asarray(t))),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": PEAK_XTOL},
    )
    return float(result.x)


def _flow_branch(profile: RadialProfile, x0: float, end: float, floor: float):
    """
    V′ = −sign(x−x₀)·|R′(R⁻¹(V))| desde cerca del pico hasta `end`, o hasta que V baja a `floor`.
    """
    direction = 1.0 if end > x0 else -1.0
    start_offset = FLOW_START_FRACTION * abs(end - x0)
    start = x0 + direction * start_offset
    v_start = float(profile.evaluate(start_offset))
    peak = profile.max_value

    def rhs(x, v):
        level = min(max(float(v[0]), floor), peak)
        radius = float(profile.inverse(level))
        slope = abs(float(profile.derivative(radius)))
        # |R′| contra la escala local nivel/radio, no contra el pico
        if radius > 0 and slope < DEGENERATE_GRADIENT * level / max(radius, 1.0):
            raise SingularFlowError(f"R′(R⁻¹(V)) ≈ 0 en V={level:.6g}, x={x:.6g}")
        return [-direction * slope]

    def bottom(x, v):
        return v[0] - floor

    bottom.terminal = True
    solution = solve_ivp(
        rhs,
        (start, end),
        [v_start],
        method="DOP853",
        rtol=settings.ODE_RTOL,
        atol=floor,
        dense_output=True,
        events=bottom,
    )
    if solution.status == -1:
        raise SingularFlowError(f"La línea de flujo se detuvo: {solution.message}")
    return solution, start, float(solution.t[-1])


def reconstruct_field_1d(profile: RadialProfile, target: PotentialField) -> Reconstruction:
    """
    Reconstruye V desde su perfil radial: ubica x₀ y sigue las dos líneas de flujo.

    Devuelve x₀ y sup|V_rec − V| en una grilla del intervalo de truncación.
    """
    if target.dimension != 1:
        raise ValueError("La reconstrucción por líneas de flujo solo está hecha para n = 1")
    x0 = locate_peak(target)
    a, b = target.truncation_interval()
    floor = settings.SUPPORT_TOL * profile.max_value
    grid = np.linspace(a, b, RECONSTRUCTION_POINTS)
    values = np.zeros_like(grid)

    branches = run_parallel(
        lambda end: _flow_branch(profile, x0, end, floor), [b, a], threads=2
    )
    (right, right_start, right_stop), (left, left_start, left_stop) = branches
    on_right = (grid >= right_start) & (grid <= right_stop)
    on_left = (grid <= left_start) & (grid >= left_stop)
    if np.any(on_right):
        values[on_right] = right.sol(grid[on_right])[0]
    if np.any(on_left):
        values[on_left] = left.sol(grid[on_left])[0]
    # entre los dos arranques la línea de flujo no se integra: ahí V = R(|x − x₀|)
    near = (grid > left_start) & (grid < right_start)
    values[near] = profile.evaluate(np.abs(grid[near] - x0))

    sup_error = float(np.max(np.abs(values - target.evaluate(grid))))
    logger.info(f"Reconstrucción: x₀={x0:.10g}, error sup {sup_error:.3e}")
    return Reconstruction(x0, sup_error, grid, values)
