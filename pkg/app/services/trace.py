"""
Los dos lados de la identidad de traza y el ajuste en h.

- Lado directo: I₁ = ∫∫ f(|ξ|²+V) − f(|ξ|²) e I₂ = ∫∫ |∇V|² f'''(|ξ|²+V). La integral en ξ
  es el núcleo de fase del par, así que aquí solo queda la integral espacial.
- Lado espectral: pareo de Birman–Krein, Tr(g(√P) − g(√P₀)) = ∫₀^∞ g'(λ)ξ(λ)dλ con
  ξ = −θ/2π, θ = 2 arg T. T sale de empalmar ondas planas a través de rebanadas finas del
  potencial truncado; a frecuencias altas, de la expansión semiclásica de la fase.
- Lado de resonancias: `resonances.resonance_sum` + el término de umbral.

Con la traza escalada (2πh)ⁿ·Tr(h) en varios h se ajusta c₀ + c₂h² + c₄h⁴.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import IllConditionedFitError, QuadratureError
from app.core.workers import run_parallel
from app.enums.trace_source import TraceSource
from app.services.potentials import PotentialField, sphere_area
from app.services.quadrature import integrate, panel_rule
from app.services.resonances import (
    SpectralProblem,
    default_window,
    find_resonances,
    make_problem,
    resonance_sum,
    threshold_term,
)
from app.services.testfns import TestFunctionPair, decay_radius

logger = logging.getLogger(__name__)

#: Rebanadas mínimas del potencial truncado en el empalme de ondas planas.
MIN_SLICES = 400
#: Rebanadas por unidad de ancho·√max V/h.
SLICES_PER_UNIT = 8.0
#: Orden de Gauss–Legendre de los paneles en λ.
LAMBDA_ORDER = 10
#: Ancho máximo de un panel en λ.
MAX_LAMBDA_PANEL = 0.5
#: Salto máximo de arg T entre puntos vecinos antes de refinar (θ salta el doble).
UNWRAP_STEP = 0.25 * math.pi
UNWRAP_REFINEMENTS = 14
#: Corte relativo de |g'| que fija el λ máximo del pareo.
TAIL_TOL = 1e-12
#: Paneles en x de la fase semiclásica.
WKB_PANELS = 64
#: La traza de resonancias alimenta el ajuste solo si su cota es menor que esto.
RESONANCE_BOUND_LIMIT = 1e-6
MIN_FIT_POINTS = 4


# ---------- lado directo ----------

def _spatial_integral(field_: PotentialField, density, tol: Optional[float]) -> float:
    """∫_{ℝⁿ} density(x) dx, en 1-D sobre el intervalo de truncación y radial si n ≥ 3."""
    tol = settings.QUAD_TOL if tol is None else tol
    if field_.max_value == 0:
        return 0.0
    n = field_.dimension
    if n == 1:
        a, b = field_.truncation_interval()
        return integrate(density, a, b, breakpoints=field_.breakpoints, tol=tol, rel_tol=tol)
    if field_.profile is None:
        raise ValueError("Para n >= 3 las integrales directas requieren un campo radial")
    radius = field_.radial_extent()
    return sphere_area(n, 1.0) * integrate(
        lambda r: r ** (n - 1) * density(r), 0.0, radius, tol=tol, rel_tol=tol
    )


def _profile_pieces(field_: PotentialField):
    """(V, |∇V|²) como funciones de la variable de integración (x en 1-D, r radial)."""
    if field_.dimension == 1:
        return field_.evaluate, lambda x: field_.gradient(x) ** 2
    profile = field_.profile
    return profile.evaluate, lambda r: profile.derivative(r) ** 2


def direct_leading(field_: PotentialField, pair: TestFunctionPair, *, tol: Optional[float] = None) -> float:
    """I₁ = ∫_{ℝ²ⁿ} f(|ξ|²+V) − f(|ξ|²) dxdξ."""
    value, _ = _profile_pieces(field_)
    n = field_.dimension
    return _spatial_integral(field_, lambda x: pair.leading_kernel(value(x), n), tol)


def direct_subleading(field_: PotentialField, pair: TestFunctionPair, *, tol: Optional[float] = None) -> float:
    """I₂ = ∫_{ℝ²ⁿ} |∇V|² f'''(|ξ|²+V) dxdξ."""
    value, grad2 = _profile_pieces(field_)
    n = field_.dimension
    return _spatial_integral(
        field_, lambda x: grad2(x) * pair.phase_space_kernel(3, value(x), n), tol
    )


# ---------- fase de dispersión ----------

def _slice_edges(problem: SpectralProblem, count: int) -> np.ndarray:
    lo, hi = problem.interval
    cuts = [lo, *problem.breakpoints, hi]
    edges = [np.array([lo])]
    for a, b in zip(cuts[:-1], cuts[1:]):
        pieces = max(1, int(math.ceil(count * (b - a) / (hi - lo))))
        edges.append(np.linspace(a, b, pieces + 1)[1:])
    return np.concatenate(edges)


def default_slices(problem: SpectralProblem) -> int:
    scale = problem.width * math.sqrt(max(problem.field.max_value, 0.0)) / problem.h
    return max(MIN_SLICES, int(math.ceil(SLICES_PER_UNIT * scale)))


def plane_wave_wronskian(
    problem: SpectralProblem, lams, slices: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    W̃ por empalme de ondas planas: V constante (su valor medio) en cada rebanada y
    propagador exacto de (u, u') en cada una.

    Devuelve (mantisa, log|escala|): W̃ = mantisa·exp(log). La mantisa conserva la fase
    aunque |W̃| desborde.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    h = problem.h
    k = lams / h
    edges = _slice_edges(problem, slices or default_slices(problem))
    widths = np.diff(edges)
    levels = problem.field.evaluate(0.5 * (edges[:-1] + edges[1:])) / h ** 2
    s = np.maximum(1.0, np.abs(k))
    u = np.ones_like(k)
    du = -1j * k
    log_scale = np.zeros(k.shape)
    k2 = k * k
    for level, d in zip(levels, widths):
        kappa = np.sqrt(k2 - level)
        arg = kappa * d
        small = np.abs(arg) < 1e-6
        safe = np.where(small, 1.0, kappa)
        sinc = np.where(small, d * (1.0 - arg * arg / 6.0), np.sin(arg) / safe)
        c = np.cos(arg)
        u, du = c * u + sinc * du, -kappa * kappa * sinc * u + c * du
        norm = np.maximum(np.abs(u), np.abs(du) / s)
        u, du = u / norm, du / norm
        log_scale += np.log(norm)
    x_l, x_r = problem.interval
    mantissa = (du - 1j * k * u) * np.exp(1j * k * (x_r - x_l))
    return mantissa, log_scale


def _wrap(angle):
    return (np.asarray(angle) + math.pi) % (2.0 * math.pi) - math.pi


def transmission_arg(problem: SpectralProblem, lams) -> np.ndarray:
    """arg T(λ) envuelto, con T = −2ik/W̃; extrapolado de Richardson en el ancho de rebanada."""
    lams = np.asarray(lams, dtype=float)
    slices = default_slices(problem)
    coarse, _ = plane_wave_wronskian(problem, lams, slices)
    fine, _ = plane_wave_wronskian(problem, lams, 2 * slices)
    a_coarse = -0.5 * math.pi - np.angle(coarse)
    a_fine = -0.5 * math.pi - np.angle(fine)
    return _wrap(a_fine + _wrap(a_fine - a_coarse) / 3.0)


def _unwrapped_arg(problem: SpectralProblem, lams: np.ndarray) -> np.ndarray:
    """arg T continuo sobre `lams` (crecientes), refinando donde salta más de UNWRAP_STEP."""
    points = np.asarray(lams, dtype=float)
    original = np.ones(len(points), dtype=bool)
    values = transmission_arg(problem, points)
    for _ in range(UNWRAP_REFINEMENTS):
        steps = _wrap(np.diff(values))
        bad = np.nonzero(np.abs(steps) > UNWRAP_STEP)[0]
        if not len(bad):
            break
        mids = 0.5 * (points[bad] + points[bad + 1])
        points = np.concatenate([points, mids])
        original = np.concatenate([original, np.zeros(len(mids), dtype=bool)])
        values = np.concatenate([values, transmission_arg(problem, mids)])
        order = np.argsort(points, kind="stable")
        points, original, values = points[order], original[order], values[order]
    else:
        steps = _wrap(np.diff(values))
        bad = np.nonzero(np.abs(steps) > UNWRAP_STEP)[0]
        if len(bad):
            raise QuadratureError(
                f"arg T salta {float(np.max(np.abs(steps))):.3f} tras {UNWRAP_REFINEMENTS} refinamientos",
                where=tuple(points[bad][:8]),
            )
    unwrapped = values[0] + np.concatenate([[0.0], np.cumsum(_wrap(np.diff(values)))])
    return unwrapped[original]


def wkb_phase(field_: PotentialField, h: float, lams) -> np.ndarray:
    """θ ≈ (2/h)∫(√(λ²−V) − λ)dx − (h/16)∫V'²(λ²−V)^{−5/2}dx, para λ² muy por encima de V."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    a, b = field_.truncation_interval()
    if b <= a:
        return np.zeros_like(lams)
    nodes, weights = panel_rule(np.linspace(a, b, WKB_PANELS + 1), 20)
    x, w = nodes.ravel(), weights.ravel()
    v = field_.evaluate(x)
    dv2 = field_.gradient(x) ** 2
    lam2 = lams[:, None] ** 2
    p = np.sqrt(lam2 - v[None, :])
    first = -(v[None, :] / (p + lams[:, None])) @ w
    second = (dv2[None, :] / p ** 5) @ w
    return 2.0 / h * first - h / 16.0 * second


def born_phase(field_: PotentialField, h: float, lams) -> np.ndarray:
    """Primer término de Born: θ ≈ −∫V/(λh)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    a, b = field_.truncation_interval()
    mass = integrate(field_.evaluate, a, b, breakpoints=field_.breakpoints) if b > a else 0.0
    return -mass / (lams * h)


def wkb_switch(field_: PotentialField, h: float) -> float:
    """Frecuencia desde la que se usa la fase semiclásica; ∞ si V no es suave."""
    if not field_.smooth or field_.max_value <= 0:
        return math.inf
    root = math.sqrt(field_.max_value)
    return root * max(6.0, settings.WKB_MIN_WAVENUMBER * h)


def scattering_phase(problem: SpectralProblem, lams) -> np.ndarray:
    """
    θ(λ) = 2 arg T(λ), continua y con θ → 0 cuando λ → ∞, en λ > 0 crecientes.

    Por debajo del corte sale del empalme de ondas planas; arriba, de la fase
    semiclásica. El empalme se ancla a la referencia (semiclásica o de Born) por un
    múltiplo de 2π en arg T.
    """
    lams = np.asarray(lams, dtype=float)
    if np.any(lams <= 0) or np.any(np.diff(lams) <= 0):
        raise ValueError("scattering_phase necesita λ > 0 estrictamente crecientes")
    field_ = problem.field
    theta = np.zeros_like(lams)
    if field_.max_value == 0:
        return theta
    switch = wkb_switch(field_, problem.h)
    low = lams < switch
    if np.any(~low):
        theta[~low] = wkb_phase(field_, problem.h, lams[~low])
    if np.any(low):
        anchor = switch if math.isfinite(switch) else float(lams[low][-1])
        grid = lams[low] if anchor <= lams[low][-1] else np.append(lams[low], anchor)
        arg = _unwrapped_arg(problem, grid)
        if math.isfinite(switch):
            reference = float(wkb_phase(field_, problem.h, [anchor])[0])
        else:
            reference = float(born_phase(field_, problem.h, [anchor])[0])
        turns = round((reference - 2.0 * arg[-1]) / (4.0 * math.pi))
        matched = 2.0 * arg + 4.0 * math.pi * turns
        mismatch = abs(matched[-1] - reference)
        if mismatch > 1e-3:
            logger.warning(f"h={problem.h:g}: la fase empalmada difiere {mismatch:.2e} de la referencia en λ={anchor:.4g}")
        theta[low] = matched[: int(np.count_nonzero(low))]
    return theta


def _lambda_nodes(start: float, stop: float, panel: float) -> Tuple[np.ndarray, np.ndarray]:
    if stop <= start:
        return np.empty(0), np.empty(0)
    count = max(1, int(math.ceil((stop - start) / panel)))
    nodes, weights = panel_rule(np.linspace(start, stop, count + 1), LAMBDA_ORDER)
    return nodes.ravel(), weights.ravel()


def spectral_shift_trace(problem: SpectralProblem, pair: TestFunctionPair) -> float:
    """Tr(g(√P) − g(√P₀)) = −(1/2π)∫₀^∞ g'(λ)θ(λ)dλ."""
    field_ = problem.field
    if field_.max_value == 0:
        return 0.0
    g0 = abs(float(pair.g(np.array(0.0))))
    lam_max = decay_radius(pair, TAIL_TOL * max(g0, 1e-300), j=1)
    switch = min(wkb_switch(field_, problem.h), lam_max)
    low_nodes, low_weights = _lambda_nodes(0.0, switch, min(MAX_LAMBDA_PANEL, problem.h))
    high_nodes, high_weights = _lambda_nodes(switch, lam_max, MAX_LAMBDA_PANEL)
    nodes = np.concatenate([low_nodes, high_nodes])
    weights = np.concatenate([low_weights, high_weights])
    theta = scattering_phase(problem, nodes)
    value = -float(np.sum(weights * pair.g(nodes, 1) * theta)) / (2.0 * math.pi)
    logger.debug(
        f"h={problem.h:g}: Birman–Krein con {len(nodes)} nodos hasta λ={lam_max:.4g} (corte {switch:.4g})"
    )
    return value


# ---------- barrido en h y ajuste ----------

@dataclass(frozen=True)
class TraceRow:
    h: float
    spectral_shift: float
    source: TraceSource
    resonance: Optional[float] = None
    resonance_bound: Optional[float] = None
    threshold: Optional[float] = None
    resonance_count: Optional[int] = None

    @property
    def value(self) -> float:
        if self.source == TraceSource.RESONANCE:
            return self.resonance
        return self.spectral_shift

    def scaled(self, n: int = 1) -> float:
        return (2.0 * math.pi * self.h) ** n * self.value


@dataclass(frozen=True)
class FitResult:
    c0: float
    c2: float
    c4: float
    condition: float
    residuals: Tuple[float, ...]
    #: Cambio relativo de (c₀, c₂) al quitar el h más chico; None con pocos puntos.
    stability: Optional[float] = None


@dataclass(frozen=True)
class TraceReport:
    rows: Tuple[TraceRow, ...]
    direct_leading: float
    direct_subleading: float
    fit: Optional[FitResult] = None
    dimension: int = 1

    @property
    def expected_c2(self) -> float:
        return self.direct_subleading / 12.0


def trace_at(
    field_: PotentialField,
    pair: TestFunctionPair,
    h: float,
    *,
    resonance_min_h: Optional[float] = None,
) -> TraceRow:
    """
    Traza en un h por ambos oráculos cuando se puede; anota cuál alimenta el ajuste.

    Con el lado de resonancias pedido (h ≥ resonance_min_h), un fallo de la búsqueda se
    propaga: el cruce entre oráculos no se reemplaza en silencio por uno solo.
    """
    problem = make_problem(field_, h)
    spectral = spectral_shift_trace(problem, pair)
    skip = resonance_min_h is None or h < resonance_min_h
    if skip or not pair.admissible or field_.max_value == 0:
        return TraceRow(h=h, spectral_shift=spectral, source=TraceSource.SPECTRAL_SHIFT)
    resonances = find_resonances(problem, default_window(pair, h), threads=1)
    summed = resonance_sum(resonances, pair)
    threshold = threshold_term(pair, field_)
    resonance_value = summed.value + threshold
    use_resonance = summed.bound < RESONANCE_BOUND_LIMIT and not resonances.truncated
    logger.info(
        f"h={h:g}: resonancias={resonance_value:.10g} (±{summed.bound:.1e}), Birman–Krein={spectral:.10g}"
    )
    return TraceRow(
        h=h,
        spectral_shift=spectral,
        source=TraceSource.RESONANCE if use_resonance else TraceSource.SPECTRAL_SHIFT,
        resonance=resonance_value,
        resonance_bound=summed.bound,
        threshold=threshold,
        resonance_count=resonances.count,
    )


def trace_sweep(
    field_: PotentialField,
    pair: TestFunctionPair,
    hs: Sequence[float],
    *,
    threads: Optional[int] = None,
    resonance_min_h: Optional[float] = None,
) -> List[TraceRow]:
    if field_.dimension != 1:
        raise ValueError("El barrido de traza es unidimensional")
    return run_parallel(
        lambda h: trace_at(field_, pair, h, resonance_min_h=resonance_min_h), list(hs), threads
    )


def _solve_fit(hs: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, float, np.ndarray]:
    design = np.column_stack([np.ones_like(hs), hs ** 2, hs ** 4])
    norms = np.linalg.norm(design, axis=0)
    scaled = design / norms
    condition = float(np.linalg.cond(scaled))
    if condition > settings.FIT_MAX_CONDITION:
        raise IllConditionedFitError(
            f"Ajuste en h mal condicionado (cond={condition:.2e})", condition=condition
        )
    coeffs, *_ = np.linalg.lstsq(scaled, values, rcond=None)
    coeffs = coeffs / norms
    return coeffs, condition, values - design @ coeffs


def fit_coefficients(hs: Sequence[float], scaled_traces: Sequence[float]) -> FitResult:
    """Mínimos cuadrados de (2πh)ⁿTr(h) contra c₀ + c₂h² + c₄h⁴."""
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(scaled_traces, dtype=float)
    if len(hs) < MIN_FIT_POINTS or len(hs) != len(values):
        raise ValueError(f"El ajuste necesita al menos {MIN_FIT_POINTS} pares (h, traza)")
    coeffs, condition, residuals = _solve_fit(hs, values)
    stability = None
    if len(hs) > MIN_FIT_POINTS:
        keep = hs > np.min(hs)
        reduced, _, _ = _solve_fit(hs[keep], values[keep])
        changes = [
            abs(reduced[i] - coeffs[i]) / abs(coeffs[i]) for i in (0, 1) if abs(coeffs[i]) > 1e-300
        ]
        stability = max(changes) if changes else 0.0
    return FitResult(
        c0=float(coeffs[0]),
        c2=float(coeffs[1]),
        c4=float(coeffs[2]),
        condition=condition,
        residuals=tuple(float(r) for r in residuals),
        stability=stability,
    )


def semiclassical_fit(
    field_: PotentialField,
    pair: TestFunctionPair,
    hs: Sequence[float],
    *,
    threads: Optional[int] = None,
    resonance_min_h: Optional[float] = None,
) -> FitResult:
    rows = trace_sweep(field_, pair, hs, threads=threads, resonance_min_h=resonance_min_h)
    return fit_coefficients([r.h for r in rows], [r.scaled(field_.dimension) for r in rows])


def trace_report(
    field_: PotentialField,
    pair: TestFunctionPair,
    hs: Sequence[float],
    *,
    threads: Optional[int] = None,
    resonance_min_h: Optional[float] = None,
) -> TraceReport:
    rows = trace_sweep(field_, pair, hs, threads=threads, resonance_min_h=resonance_min_h)
    fit = None
    if len(rows) >= MIN_FIT_POINTS:
        fit = fit_coefficients([r.h for r in rows], [r.scaled(field_.dimension) for r in rows])
    leading = direct_leading(field_, pair)
    subleading = direct_subleading(field_, pair)
    if fit is not None:
        logger.info(
            f"c₀={fit.c0:.8g} (I₁={leading:.8g}), c₂={fit.c2:.8g} (I₂/12={subleading / 12.0:.8g})"
        )
    return TraceReport(tuple(rows), leading, subleading, fit, field_.dimension)
