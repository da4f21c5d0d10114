"""
Resonancias de −h²d²/dx² + V en la recta.

Las resonancias son los ceros en Im λ < 0 del Wronskiano de las dos soluciones de Jost
salientes (u ~ e^{ik|x|}, k = λ/h). Se propaga la derivada logarítmica de la solución
que sale por la izquierda y se cierra contra la onda saliente de la derecha.

La búsqueda es por principio del argumento: se cuentan ceros en un rectángulo siguiendo
la fase de W̃ sobre el borde, se subdivide hasta aislar cada cero y se pule con Newton.
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from app.core.config import settings
from app.core.errors import BoundaryTooCoarseError, WronskianError
from app.core.workers import run_parallel
from app.services.potentials import PotentialField
from app.services.quadrature import bump_rule
from app.services.testfns import TestFunctionPair

logger = logging.getLogger(__name__)

#: Módulo de la variable propagada a partir del cual se cambia a la inversa.
SWITCH_MODULUS = 2.0
#: Tope de Re del exponente acumulado antes de declarar desborde.
MAX_LOG_MODULUS = 700.0
#: Bisecciones máximas de un tramo del borde al seguir la fase.
EDGE_REFINE_DEPTH = 24
#: Mayor salto de fase admitido entre muestras vecinas del borde.
MAX_PHASE_STEP = 0.5 * math.pi
#: |W̃| en el borde por debajo de esto (relativo al máximo del borde) = cero sobre el borde.
BOUNDARY_FLOOR = 1e-7
#: Intentos de correr el rectángulo cuando hay un cero sobre el borde.
PERTURB_ATTEMPTS = 3
MIN_EDGE_SAMPLES = 8


# ---------- problema ----------

@dataclass(frozen=True)
class SpectralProblem:
    field: PotentialField
    h: float
    #: Intervalo [x_l, x_r] fuera del cual V se toma como 0.
    interval: Tuple[float, float]
    rtol: float

    @property
    def width(self) -> float:
        return self.interval[1] - self.interval[0]

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        lo, hi = self.interval
        return tuple(b for b in self.field.breakpoints if lo < b < hi)


def make_problem(
    field_: PotentialField,
    h: float,
    *,
    rtol: Optional[float] = None,
    truncation_tol: Optional[float] = None,
) -> SpectralProblem:
    """El intervalo sale del soporte (barreras) o del corte relativo SUPPORT_TOL."""
    if field_.dimension != 1:
        raise ValueError("Las resonancias solo se calculan en dimensión 1")
    if not h > 0:
        raise ValueError(f"h debe ser > 0 (llegó {h})")
    interval = field_.truncation_interval(truncation_tol)
    return SpectralProblem(
        field=field_,
        h=float(h),
        interval=interval,
        rtol=settings.ODE_RTOL if rtol is None else rtol,
    )


# ---------- Wronskiano ----------

def _propagate(problem: SpectralProblem, k: complex) -> Tuple[bool, complex, complex]:
    """
    Integra u'' = (V/h² − k²)u en [x_l, x_r] con u(x_l) = 1, u'(x_l) = −ik.

    Devuelve (modo, variable, logaritmo): en modo derivada logarítmica la variable es
    η = (u'/u)/s y el logaritmo es log u; en modo inverso es ζ = s·u/u' y log u'.
    s = max(1, |k|) deja ambas variables de orden 1.
    """
    x_l, x_r = problem.interval
    s = max(1.0, abs(k))
    value_fn = problem.field.value_fn
    inv_h2 = 1.0 / problem.h ** 2
    k2 = k * k

    def log_derivative_rhs(x, state):
        q = float(value_fn(np.asarray(x))) * inv_h2 - k2
        eta = state[0]
        return np.array([(q - s * s * eta * eta) / s, s * eta])

    def inverse_rhs(x, state):
        q = float(value_fn(np.asarray(x))) * inv_h2 - k2
        zeta = state[0]
        return np.array([s - q * zeta * zeta / s, q * zeta / s])

    def leave(x, state):
        return abs(state[0]) - SWITCH_MODULUS

    leave.terminal = True
    leave.direction = 1

    log_mode = True
    variable = -1j * k / s
    logarithm = 0j
    x = x_l
    stops = [*problem.breakpoints, x_r]
    max_step = max(problem.width / 16.0, 1e-3)

    for stop in stops:
        while x < stop:
            rhs = log_derivative_rhs if log_mode else inverse_rhs
            sol = solve_ivp(
                rhs,
                (x, stop),
                np.array([variable, logarithm], dtype=complex),
                method="DOP853",
                rtol=problem.rtol,
                atol=1e-13,
                max_step=max_step,
                events=leave,
            )
            if sol.status == -1:
                raise WronskianError(f"Falló la integración en λ={k * problem.h:.6g}: {sol.message}", k * problem.h)
            x = float(sol.t[-1])
            variable, logarithm = complex(sol.y[0, -1]), complex(sol.y[1, -1])
            if sol.status == 1:
                # cambio de variable: u'/u = s·η  ⇄  ζ = s·u/u'
                if log_mode:
                    logarithm = logarithm + cmath.log(s * variable)
                    variable = 1.0 / variable
                else:
                    logarithm = logarithm - cmath.log(s / variable)
                    variable = 1.0 / variable
                log_mode = not log_mode
    return log_mode, variable, logarithm


def wronskian(problem: SpectralProblem, lam: complex) -> complex:
    """
    W̃(λ) = −W(f₋, f₊), con f± las soluciones de Jost exactas.

    Es entero en λ, sus ceros con Im λ < 0 son las resonancias y no depende del
    intervalo de truncación. Para V ≡ 0 vale −2iλ/h.
    """
    lam = complex(lam)
    if lam == 0:
        raise ValueError("λ = 0 es el umbral: el Wronskiano no se evalúa ahí")
    k = lam / problem.h
    x_l, x_r = problem.interval
    log_mode, variable, logarithm = _propagate(problem, k)
    s = max(1.0, abs(k))
    exponent = logarithm + 1j * k * (x_r - x_l)
    if log_mode:
        factor = s * variable - 1j * k
    else:
        factor = 1.0 - 1j * k * variable / s
    if exponent.real > MAX_LOG_MODULUS:
        raise WronskianError(f"Desborde del Wronskiano en λ={lam:.6g}", lam)
    return factor * cmath.exp(exponent)


def square_barrier_wronskian(height: float, left: float, right: float, h: float, lam: complex) -> complex:
    """
    W̃ de la barrera cuadrada por empalme de ondas planas:
    −e^{ikw}[2ik·cos κw + (k² + κ²)·sin(κw)/κ], κ² = (λ² − height)/h², w = right − left.
    """
    lam = complex(lam)
    w = right - left
    k = lam / h
    kappa = cmath.sqrt(lam * lam - height) / h
    if abs(kappa * w) < 1e-8:
        sinc = w * (1.0 - (kappa * w) ** 2 / 6.0)
    else:
        sinc = cmath.sin(kappa * w) / kappa
    return -cmath.exp(1j * k * w) * (2j * k * cmath.cos(kappa * w) + (k * k + kappa * kappa) * sinc)


# ---------- ventana y conteo ----------

@dataclass(frozen=True)
class Window:
    """Rectángulo [re_min, re_max] × [im_min, im_max] en el semiplano inferior."""

    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not self.re_min < self.re_max:
            raise ValueError(f"Ventana vacía en Re: [{self.re_min}, {self.re_max}]")
        if not self.im_min < self.im_max <= 0:
            raise ValueError(f"Se necesita im_min < im_max <= 0 (llegó [{self.im_min}, {self.im_max}])")

    def clipped(self, radius: Optional[float] = None) -> "Window":
        """Baja el techo a −radio para dejar fuera el disco del umbral."""
        radius = settings.THRESHOLD_RADIUS if radius is None else radius
        return Window(self.re_min, self.re_max, self.im_min, min(self.im_max, -radius))

    def contains(self, lam: complex) -> bool:
        return self.re_min <= lam.real <= self.re_max and self.im_min <= lam.imag <= self.im_max

    @property
    def size(self) -> float:
        return max(self.re_max - self.re_min, self.im_max - self.im_min)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))

    def corners(self) -> List[complex]:
        """En sentido antihorario."""
        return [
            complex(self.re_min, self.im_min),
            complex(self.re_max, self.im_min),
            complex(self.re_max, self.im_max),
            complex(self.re_min, self.im_max),
        ]

    def split(self, fraction: float = 0.5) -> Tuple["Window", "Window"]:
        if self.re_max - self.re_min >= self.im_max - self.im_min:
            cut = self.re_min + fraction * (self.re_max - self.re_min)
            return (
                Window(self.re_min, cut, self.im_min, self.im_max),
                Window(cut, self.re_max, self.im_min, self.im_max),
            )
        cut = self.im_min + fraction * (self.im_max - self.im_min)
        return (
            Window(self.re_min, self.re_max, self.im_min, cut),
            Window(self.re_min, self.re_max, cut, self.im_max),
        )

    def grown(self, delta: float) -> "Window":
        """Agranda los cuatro lados; el techo, si ya está en el disco del umbral, baja en vez de subir."""
        ceiling = self.im_max + delta
        if ceiling > -settings.THRESHOLD_RADIUS:
            ceiling = self.im_max - delta
        return Window(self.re_min - delta, self.re_max + delta, self.im_min - delta, ceiling)


def default_window(pair: TestFunctionPair, h: float, tol: Optional[float] = None) -> Window:
    """
    Λ = 12/h y profundidad Γ tal que lo que queda debajo aporta menos que `tol`:
    (1/2π)∫ĝ·e^{−t₀Γ} ≤ tol.
    """
    if pair.support is None:
        raise ValueError("El lado de resonancias necesita ĝ con soporte lejos de 0")
    tol = settings.WINDOW_TRUNCATION_TOL if tol is None else tol
    t0 = pair.support[0]
    mass = pair.fourier_moment(0)
    depth = max(math.log(mass / (2.0 * math.pi * tol)) / t0, 10.0 * settings.THRESHOLD_RADIUS)
    reach = 12.0 / h
    return Window(-reach, reach, -depth, -settings.THRESHOLD_RADIUS)


class _BoundaryHit(Exception):
    """Un cero está (casi) sobre el borde."""


class _Evaluator:
    """W̃ memoizado por λ durante una búsqueda; las tandas se reparten en hilos."""

    def __init__(self, problem: SpectralProblem, threads: Optional[int]):
        self.problem = problem
        self.threads = threads
        self.cache: Dict[complex, complex] = {}

    def __call__(self, lam: complex) -> complex:
        if lam not in self.cache:
            self.cache[lam] = wronskian(self.problem, lam)
        return self.cache[lam]

    def many(self, lams: Sequence[complex]) -> np.ndarray:
        missing = [z for z in dict.fromkeys(lams) if z not in self.cache]
        if missing:
            values = run_parallel(lambda z: wronskian(self.problem, z), missing, self.threads)
            self.cache.update(zip(missing, values))
        return np.array([self.cache[z] for z in lams])


def _edge_samples(a: complex, b: complex, density: float) -> List[complex]:
    """Muestras de a a b; el orden canónico hace que bordes compartidos reusen la caché."""
    flip = (a.real, a.imag) > (b.real, b.imag)
    lo, hi = (b, a) if flip else (a, b)
    count = max(MIN_EDGE_SAMPLES, int(math.ceil(abs(hi - lo) * density)))
    points = [lo + (hi - lo) * (i / count) for i in range(count + 1)]
    return points[::-1] if flip else points


def _edge_winding(evaluator: _Evaluator, points: List[complex]) -> Tuple[float, float, float]:
    """
    Variación de arg W̃ sobre un tramo, bisecando donde la fase salta demasiado.

    Un salto que sigue sin resolverse tras EDGE_REFINE_DEPTH bisecciones es un cero sobre
    el tramo: se avisa con _BoundaryHit para que quien cuenta corra el borde.
    """
    values = evaluator.many(points)
    total = 0.0
    low, high = float(np.min(np.abs(values))), float(np.max(np.abs(values)))
    stack = [(points[i], points[i + 1], values[i], values[i + 1], 0) for i in range(len(points) - 1)]
    while stack:
        a, b, wa, wb, depth = stack.pop()
        if wa == 0 or wb == 0:
            raise _BoundaryHit()
        step = cmath.phase(wb / wa)
        if abs(step) <= MAX_PHASE_STEP:
            total += step
            continue
        if depth >= EDGE_REFINE_DEPTH:
            logger.debug(f"Salto de fase {step:.3f} sin resolver entre {a:.6g} y {b:.6g}: cero sobre el borde")
            raise _BoundaryHit()
        mid = 0.5 * (a + b)
        wm = evaluator(mid)
        low, high = min(low, abs(wm)), max(high, abs(wm))
        stack.append((a, mid, wa, wm, depth + 1))
        stack.append((mid, b, wm, wb, depth + 1))
    return total, low, high


def _winding(evaluator: _Evaluator, window: Window) -> int:
    density = max(2.0 * evaluator.problem.width / evaluator.problem.h, 1.0)
    corners = window.corners()
    total, low, high = 0.0, math.inf, 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        part, part_low, part_high = _edge_winding(evaluator, _edge_samples(a, b, density))
        total += part
        low, high = min(low, part_low), max(high, part_high)
    if low < BOUNDARY_FLOOR * high:
        raise _BoundaryHit()
    turns = total / (2.0 * math.pi)
    count = int(round(turns))
    if abs(turns - count) > 0.1:
        raise BoundaryTooCoarseError(f"Vueltas no enteras ({turns:.4f}) sobre {window}")
    return count


def count_zeros(problem: SpectralProblem, window: Window, *, threads: Optional[int] = None) -> int:
    """
    Ceros de W̃ dentro del rectángulo, con multiplicidad, por principio del argumento.

    Si hay un cero sobre el borde el rectángulo se agranda un poco y se vuelve a contar.
    """
    evaluator = _Evaluator(problem, threads)
    return _count_with_perturbation(evaluator, window)[0]


def _count_with_perturbation(evaluator: _Evaluator, window: Window) -> Tuple[int, Window]:
    current = window
    for attempt in range(PERTURB_ATTEMPTS + 1):
        try:
            return _winding(evaluator, current), current
        except _BoundaryHit:
            delta = 1e-3 * window.size * (attempt + 1)
            logger.debug(f"Cero sobre el borde de {current}; se agranda {delta:.2e}")
            current = window.grown(delta)
    raise BoundaryTooCoarseError(f"No se pudo apartar el borde de un cero en {window}")


# ---------- búsqueda ----------

@dataclass(frozen=True)
class Resonance:
    lam: complex
    multiplicity: int
    residual: float


@dataclass(frozen=True)
class ResonanceSet:
    h: float
    window: Window
    resonances: Tuple[Resonance, ...] = ()
    truncated: bool = False
    #: Ceros que el principio del argumento vio en toda la ventana.
    winding: int = 0

    @property
    def count(self) -> int:
        return sum(r.multiplicity for r in self.resonances)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.resonances], dtype=complex)

    def mirror_defect(self) -> float:
        """max_λ min_μ |μ − (−λ̄)|; 0 para un conjunto simétrico."""
        lams = self.lambdas
        if not len(lams):
            return 0.0
        mirrored = -np.conj(lams)
        return float(np.max(np.min(np.abs(mirrored[:, None] - lams[None, :]), axis=1)))

    def rows(self) -> List[Tuple[float, float, int, float]]:
        return [(r.lam.real, r.lam.imag, r.multiplicity, r.residual) for r in self.resonances]


def _newton(evaluator: _Evaluator, start: complex, multiplicity: int, scale: float) -> Tuple[complex, bool]:
    z = start
    for _ in range(settings.NEWTON_MAX_ITER):
        w = evaluator(z)
        if abs(w) <= settings.NEWTON_TOL * scale:
            return z, True
        delta = 1e-6 * (1.0 + abs(z))
        slope = (evaluator(z + delta) - evaluator(z - delta)) / (2.0 * delta)
        if slope == 0:
            return z, False
        step = multiplicity * w / slope
        z = z - step
        if abs(step) <= 1e-15 * (1.0 + abs(z)):
            return z, abs(evaluator(z)) <= settings.NEWTON_TOL * scale * 1e3
    return z, abs(evaluator(z)) <= settings.NEWTON_TOL * scale


def _boundary_scale(evaluator: _Evaluator, window: Window) -> float:
    return max(abs(evaluator(z)) for z in window.corners())


def find_resonances(
    problem: SpectralProblem,
    window: Window,
    max_count: Optional[int] = None,
    *,
    threads: Optional[int] = None,
) -> ResonanceSet:
    """
    Subdivide la ventana hasta que cada caja tenga a lo sumo un cero y lo pule con Newton.

    Con `max_count` se corta al llegar a esa cantidad (con multiplicidad) y el conjunto
    sale marcado como truncado.
    """
    window = window.clipped()
    evaluator = _Evaluator(problem, threads)
    total, root = _count_with_perturbation(evaluator, window)
    logger.info(f"h={problem.h:g}: {total} ceros en {root}")

    found: List[Resonance] = []
    truncated = False
    queue: List[Tuple[Window, int, int]] = [(root, total, 0)]
    while queue:
        box, count, depth = queue.pop()
        if count <= 0:
            continue
        tiny = box.size <= 1e-9 * (1.0 + abs(box.center))
        if count == 1 or tiny or depth >= settings.BOX_MAX_DEPTH:
            scale = max(_boundary_scale(evaluator, box), 1.0)
            lam, ok = _newton(evaluator, box.center, count, scale)
            if ok and box.contains(lam):
                found.append(Resonance(lam, count, abs(evaluator(lam))))
                logger.debug(f"Resonancia {lam:.10g} (mult. {count}) en profundidad {depth}")
                if max_count is not None and sum(r.multiplicity for r in found) >= max_count:
                    truncated = bool(queue) or sum(r.multiplicity for r in found) > max_count
                    break
                continue
            if tiny or depth >= settings.BOX_MAX_DEPTH:
                logger.warning(f"Newton no convergió en la caja {box}; se toma el centro")
                found.append(Resonance(box.center, count, abs(evaluator(box.center))))
                continue
        first, second = _split_counted(evaluator, box)
        (w1, c1), w2 = first, second
        queue.append((w2, count - c1, depth + 1))
        queue.append((w1, c1, depth + 1))

    found.sort(key=lambda r: (r.lam.real, r.lam.imag))
    result = ResonanceSet(problem.h, root, tuple(found), truncated, total)
    if truncated:
        logger.warning(f"Búsqueda truncada en {max_count} resonancias")
    return result


def _split_counted(evaluator: _Evaluator, box: Window) -> Tuple[Tuple[Window, int], Window]:
    """Parte la caja; si hay un cero sobre la línea de corte, corre el corte."""
    for fraction in (0.5, 0.5 + 1e-3, 0.5 - 2e-3, 0.5 + 7e-3):
        first, second = box.split(fraction)
        try:
            return (first, _winding(evaluator, first)), second
        except _BoundaryHit:
            continue
    raise BoundaryTooCoarseError(f"No se pudo partir {box} lejos de un cero")


# ---------- suma de resonancias ----------

@dataclass(frozen=True)
class ResonanceSum:
    value: float
    bound: float
    #: Parte imaginaria residual; tiende a 0 cuando el conjunto es simétrico.
    imaginary: float
    terms: Tuple[complex, ...] = field(default=(), repr=False)


def resonance_term(pair: TestFunctionPair, lam: complex) -> complex:
    """(1/2π)∫₀^∞ ĝ(t)e^{−itλ}dt."""
    t0, T = pair.support
    t, w = bump_rule(t0, T, abs(lam.real))
    return complex(np.sum(w * pair.ghat(t) * np.exp(-1j * t * lam)) / (2.0 * math.pi))


def resonance_sum(resonances: ResonanceSet, pair: TestFunctionPair) -> ResonanceSum:
    """
    (1/4π)Σ mult·∫_ℝ e^{−i|t|λ}ĝ(t)dt = Σ mult·(1/2π)∫₀^∞ ĝ e^{−itλ}dt.

    La cota de truncación es empírica: (cantidad+1) veces el mayor término posible sobre
    el borde de la ventana (fondo y laterales), que es donde viven las que quedaron fuera.
    """
    if pair.support is None:
        raise ValueError("resonance_sum necesita un par con ĝ soportado lejos de 0")
    terms = tuple(r.multiplicity * resonance_term(pair, r.lam) for r in resonances.resonances)
    total = sum(terms, 0j)
    win = resonances.window
    edge = [complex(x, win.im_min) for x in np.linspace(win.re_min, win.re_max, 33)]
    edge += [complex(x, y) for x in (win.re_min, win.re_max) for y in np.linspace(win.im_min, win.im_max, 9)]
    largest = max(abs(resonance_term(pair, z)) for z in edge)
    bound = (resonances.count + 1) * largest
    return ResonanceSum(value=total.real, bound=bound, imaginary=total.imag, terms=terms)


def threshold_term(pair: TestFunctionPair, field_: Optional[PotentialField] = None) -> float:
    """
    −g(0)/2: corrección del umbral en dimensión 1 para V sin resonancia en 0.

    El problema libre sí tiene resonancia en 0 y ahí la corrección no va.
    """
    if field_ is not None and field_.max_value == 0:
        return 0.0
    return -pair.fourier_moment(0) / (2.0 * math.pi)
