"""
Modelos de potencial: perfiles radiales, campos en ℝⁿ, certificados de decaimiento y el
oráculo de conjuntos de nivel.

Un campo NO es una grilla: es un par de funciones (valor y gradiente) más metadatos
(dimensión, certificado, pico, puntos de quiebre). Cada consumidor muestrea con la
precisión que necesita. Todo es inmutable y reentrante: se puede evaluar desde varios
hilos a la vez.

Convención de evaluación:
- n = 1: `evaluate(x)` recibe cualquier arreglo de posiciones y devuelve la misma forma;
  `gradient(x)` devuelve V'(x) con esa forma.
- n > 1: `x` tiene forma (..., n); `evaluate` devuelve (...) y `gradient` (..., n).
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gamma

from app.core.config import settings
from app.core.errors import DegenerateLevelError, MonotonicityError
from app.enums.potential_kind import PotentialKind

logger = logging.getLogger(__name__)

#: |∇V| por debajo de esto en una preimagen = nivel crítico.
DEGENERATE_GRADIENT = 1e-8
#: Puntos de la grilla con que se buscan las preimágenes de un nivel (n=1).
LEVEL_SCAN_POINTS = 4001


def unit_ball_volume(n: int) -> float:
    """ω_n = π^{n/2}/Γ(n/2+1); ω₁ = 2."""
    return math.pi ** (n / 2) / gamma(n / 2 + 1)


def sphere_area(n: int, r: float) -> float:
    """Área de la esfera de radio r en ℝⁿ; para n=1 es la cantidad de puntos (2)."""
    return n * unit_ball_volume(n) * r ** (n - 1)


def _check_odd_dimension(n: int) -> None:
    if n < 1 or n % 2 == 0:
        raise ValueError(f"La dimensión debe ser un entero impar positivo (llegó {n})")


# ---------- certificado ----------

@dataclass(frozen=True)
class DecayCertificate:
    """|V(x)| ≤ A·exp(−B|x|^{1+ε}) y |∂^α V| ≤ C_α."""

    epsilon: float
    A: float
    B: float
    #: C_α para |α| = 0, 1, 2; `inf` cuando V no es suave (barrera cuadrada).
    derivative_bounds: tuple[float, ...] = ()

    def bound(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        return self.A * np.exp(-self.B * r ** (1.0 + self.epsilon))

    def radius(self, tol: float) -> float:
        """Menor L con A·exp(−B·L^{1+ε}) ≤ tol; sale del certificado, no de muestrear."""
        if self.A <= tol:
            return 0.0
        return (math.log(self.A / tol) / self.B) ** (1.0 / (1.0 + self.epsilon))

    def shifted(self, distance: float) -> "DecayCertificate":
        """
        Certificado respecto del origen para el campo trasladado una distancia d.

        |x−x₀|^{1+ε} ≥ 2^{−ε}|x|^{1+ε} − |x₀|^{1+ε}, así que A crece por e^{B d^{1+ε}} y B
        se divide por 2^ε.
        """
        if distance == 0:
            return self
        return replace(
            self,
            A=self.A * math.exp(self.B * distance ** (1.0 + self.epsilon)),
            B=self.B * 2.0 ** (-self.epsilon),
        )

    def scaled(self, factor: float) -> "DecayCertificate":
        return replace(
            self,
            A=self.A * factor,
            derivative_bounds=tuple(c * factor for c in self.derivative_bounds),
        )


# ---------- perfiles radiales ----------

class RadialProfile(ABC):
    """R(r) con R' < 0 para r > 0 e inversa sobre la rama monótona."""

    @property
    @abstractmethod
    def max_value(self) -> float:
        ...

    @property
    @abstractmethod
    def certificate(self) -> DecayCertificate:
        ...

    @abstractmethod
    def evaluate(self, r):
        ...

    @abstractmethod
    def derivative(self, r):
        ...

    @abstractmethod
    def inverse(self, s):
        ...

    @abstractmethod
    def scaled(self, factor: float) -> "RadialProfile":
        ...

    def effective_radius(self, tol: float) -> float:
        return self.certificate.radius(tol)

    def volume_above(self, s, n: int):
        """μ(s) = vol({R(|x|) > s}) = ω_n·(R⁻¹(s))ⁿ."""
        return unit_ball_volume(n) * np.asarray(self.inverse(s)) ** n

    def _check_levels(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0) or np.any(s > self.max_value * (1 + 1e-15)):
            raise ValueError(f"Nivel fuera de (0, {self.max_value:.6g}]")
        return s


@dataclass(frozen=True)
class GaussianProfile(RadialProfile):
    amplitude: float
    width: float

    @property
    def max_value(self) -> float:
        return self.amplitude

    @property
    def certificate(self) -> DecayCertificate:
        a, w = self.amplitude, self.width
        return DecayCertificate(
            epsilon=1.0,
            A=a,
            B=1.0 / w ** 2,
            derivative_bounds=(a, a * math.sqrt(2.0 / math.e) / w, 2.0 * a / w ** 2),
        )

    def evaluate(self, r):
        r = np.asarray(r, dtype=float)
        return self.amplitude * np.exp(-(r / self.width) ** 2)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return -2.0 * r / self.width ** 2 * self.evaluate(r)

    def inverse(self, s):
        s = self._check_levels(s)
        return self.width * np.sqrt(np.log(self.amplitude / s))

    def scaled(self, factor: float) -> "GaussianProfile":
        return GaussianProfile(self.amplitude * factor, self.width)


def make_gaussian_profile(amplitude: float, width: float) -> GaussianProfile:
    """R(r) = amplitude·exp(−r²/width²)."""
    if not amplitude > 0:
        raise ValueError(f"amplitude debe ser > 0 (llegó {amplitude})")
    if not width > 0:
        raise ValueError(f"width debe ser > 0 (llegó {width})")
    return GaussianProfile(float(amplitude), float(width))


class InterpolatedProfile(RadialProfile):
    """
    Perfil tabulado (r_i, s_i). Se interpola ln s como función monótona (PCHIP) de r²,
    variable en la que un máximo no degenerado es regular: R ≈ P − c·r² cerca del pico.

    Más allá del último radio tabulado ln s sigue recto en r² con la pendiente del borde,
    una cola gaussiana, que es lo que le da certificado de decaimiento al perfil reconstruido.
    """

    def __init__(self, radii: Sequence[float], levels: Sequence[float]):
        r = np.asarray(radii, dtype=float)
        s = np.asarray(levels, dtype=float)
        if r.shape != s.shape or r.size < 4:
            raise ValueError("Se necesitan al menos 4 pares (r, s) de igual longitud")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise MonotonicityError("Los radios deben empezar en 0 y crecer estrictamente")
        if np.any(np.diff(s) >= 0) or s[-1] <= 0:
            raise MonotonicityError("Los niveles deben decrecer estrictamente y ser positivos")
        self._r = r
        self._s = s
        self._rho_max = float(r[-1] ** 2)
        self._log_min = math.log(s[-1])
        self._spline = PchipInterpolator(r ** 2, np.log(s), extrapolate=False)
        self._slope = self._spline.derivative()
        #: Cola s_min·exp(−β(r² − r_max²)), con la pendiente de ln s en r_max².
        self._beta = max(-float(self._slope(self._rho_max)), 1e-12)

    @property
    def radii(self) -> np.ndarray:
        return self._r

    @property
    def levels(self) -> np.ndarray:
        return self._s

    @property
    def max_value(self) -> float:
        return float(self._s[0])

    @property
    def certificate(self) -> DecayCertificate:
        return DecayCertificate(
            epsilon=1.0,
            A=self.max_value * math.exp(self._beta * self._rho_max),
            B=self._beta,
        )

    def _log_level(self, rho: np.ndarray) -> np.ndarray:
        inside = rho <= self._rho_max
        out = np.empty_like(rho)
        out[inside] = self._spline(rho[inside])
        out[~inside] = self._log_min - self._beta * (rho[~inside] - self._rho_max)
        return out

    def _log_slope(self, rho: np.ndarray) -> np.ndarray:
        inside = rho <= self._rho_max
        out = np.full_like(rho, -self._beta)
        out[inside] = self._slope(rho[inside])
        return out

    def evaluate(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.exp(self._log_level(r ** 2))
        return out if out.ndim else float(out)

    def derivative(self, r):
        # dR/dr = 2r·R·d(ln R)/d(r²)
        r = np.abs(np.asarray(r, dtype=float))
        rho = r ** 2
        out = 2.0 * r * self._log_slope(rho) * np.exp(self._log_level(rho))
        return out if out.ndim else float(out)

    def inverse(self, s):
        s_arr = self._check_levels(s)
        flat = np.atleast_1d(s_arr).ravel()
        out = np.empty_like(flat)
        s_min = float(self._s[-1])
        for i, level in enumerate(flat):
            if level >= self.max_value:
                out[i] = 0.0
                continue
            target = math.log(level)
            if level >= s_min:
                rho = brentq(
                    lambda x: float(self._spline(x)) - target, 0.0, self._rho_max, xtol=1e-15, rtol=1e-15
                )
            else:
                rho = self._rho_max + (self._log_min - target) / self._beta
            out[i] = math.sqrt(rho)
        out = out.reshape(np.shape(s_arr))
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "InterpolatedProfile":
        return InterpolatedProfile(self._r, self._s * factor)


# ---------- campos ----------

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PotentialField:
    dimension: int
    kind: PotentialKind
    value_fn: Evaluator = field(repr=False)
    gradient_fn: Evaluator = field(repr=False)
    certificate: DecayCertificate
    max_value: float
    #: Punto donde V alcanza su máximo (el centro, para los radiales).
    peak: tuple[float, ...]
    label: str = ""
    profile: Optional[RadialProfile] = None
    center: Optional[tuple[float, ...]] = None
    breakpoints: tuple[float, ...] = ()
    support_interval: Optional[tuple[float, float]] = None
    smooth: bool = True

    @property
    def is_radial(self) -> bool:
        return self.profile is not None

    def evaluate(self, x):
        return self.value_fn(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self.gradient_fn(np.asarray(x, dtype=float))

    def gradient_norm(self, x):
        g = self.gradient(x)
        if self.dimension == 1:
            return np.abs(g)
        return np.linalg.norm(g, axis=-1)

    def support_radius(self, tol: float) -> float:
        return self.certificate.radius(tol)

    def truncation_interval(self, rel_tol: Optional[float] = None) -> tuple[float, float]:
        """
        Intervalo 1-D fuera del cual V < rel_tol·max V.

        El radio del certificado acota desde afuera; después se recorta muestreando,
        porque para campos trasladados el certificado (centrado en 0) es holgado.
        """
        if self.dimension != 1:
            raise ValueError("truncation_interval solo aplica a campos 1-D")
        if self.support_interval is not None:
            return self.support_interval
        if self.max_value <= 0:
            return (0.0, 0.0)
        rel_tol = settings.SUPPORT_TOL if rel_tol is None else rel_tol
        cutoff = rel_tol * self.max_value
        L = max(self.support_radius(cutoff), 1e-6)
        x = np.linspace(-L, L, LEVEL_SCAN_POINTS)
        above = np.nonzero(self.evaluate(x) >= cutoff)[0]
        if not len(above):
            return (0.0, 0.0)
        lo = x[max(above[0] - 1, 0)]
        hi = x[min(above[-1] + 1, len(x) - 1)]
        return (float(lo), float(hi))

    def radial_extent(self, rel_tol: Optional[float] = None) -> float:
        """Radio (alrededor del centro) fuera del cual R < rel_tol·max R."""
        if self.profile is None:
            raise ValueError("radial_extent requiere un campo radial")
        rel_tol = settings.SUPPORT_TOL if rel_tol is None else rel_tol
        if self.max_value <= 0:
            return 0.0
        return self.profile.effective_radius(rel_tol * self.max_value)

    def shifted(self, offset) -> "PotentialField":
        """V(· − x₀). Lo único que cambia es dónde está; el certificado se recalcula."""
        x0 = np.atleast_1d(np.asarray(offset, dtype=float))
        if x0.shape != (self.dimension,):
            raise ValueError(f"El desplazamiento debe tener {self.dimension} componentes")
        value_fn, gradient_fn = self.value_fn, self.gradient_fn
        shift = x0[0] if self.dimension == 1 else x0
        return replace(
            self,
            value_fn=lambda x: value_fn(x - shift),
            gradient_fn=lambda x: gradient_fn(x - shift),
            certificate=self.certificate.shifted(float(np.linalg.norm(x0))),
            peak=tuple(np.asarray(self.peak) + x0),
            center=None if self.center is None else tuple(np.asarray(self.center) + x0),
            breakpoints=tuple(b + float(x0[0]) for b in self.breakpoints),
            support_interval=(
                None
                if self.support_interval is None
                else (self.support_interval[0] + float(x0[0]), self.support_interval[1] + float(x0[0]))
            ),
            label=f"{self.label}+shift",
        )

    def scaled(self, factor: float) -> "PotentialField":
        """c·V, con c > 0 (se usa para V/h² y para el límite de acoplamiento débil)."""
        if not factor > 0:
            raise ValueError(f"El factor de escala debe ser > 0 (llegó {factor})")
        value_fn, gradient_fn = self.value_fn, self.gradient_fn
        return replace(
            self,
            value_fn=lambda x: factor * value_fn(x),
            gradient_fn=lambda x: factor * gradient_fn(x),
            certificate=self.certificate.scaled(factor),
            max_value=self.max_value * factor,
            profile=None if self.profile is None else self.profile.scaled(factor),
            label=f"{factor:g}*{self.label}",
        )


def radialize(profile: RadialProfile, n: int, center=None) -> PotentialField:
    """V(x) = R(|x − center|), con ∇V = R'(r)·(x−c)/r y ∇V(c) = 0."""
    _check_odd_dimension(n)
    c = np.zeros(n) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    if c.shape != (n,):
        raise ValueError(f"El centro debe tener {n} componentes")

    if n == 1:
        c0 = float(c[0])

        def value_fn(x):
            return profile.evaluate(np.abs(x - c0))

        def gradient_fn(x):
            d = x - c0
            return profile.derivative(np.abs(d)) * np.sign(d)
    else:
        def value_fn(x):
            return profile.evaluate(np.linalg.norm(x - c, axis=-1))

        def gradient_fn(x):
            d = x - c
            r = np.linalg.norm(d, axis=-1)
            safe = np.where(r > 0, r, 1.0)
            scale = np.where(r > 0, profile.derivative(r) / safe, 0.0)
            return scale[..., None] * d

    kind = PotentialKind.GAUSSIAN if isinstance(profile, GaussianProfile) else PotentialKind.INTERPOLATED
    return PotentialField(
        dimension=n,
        kind=kind,
        value_fn=value_fn,
        gradient_fn=gradient_fn,
        certificate=profile.certificate.shifted(float(np.linalg.norm(c))),
        max_value=profile.max_value,
        peak=tuple(c.tolist()),
        label=f"radial{n}d",
        profile=profile,
        center=tuple(c.tolist()),
    )


def make_zero_field(n: int = 1) -> PotentialField:
    _check_odd_dimension(n)

    def value_fn(x):
        return np.zeros(np.shape(x) if n == 1 else np.shape(x)[:-1])

    def gradient_fn(x):
        return np.zeros(np.shape(x))

    return PotentialField(
        dimension=n,
        kind=PotentialKind.ZERO,
        value_fn=value_fn,
        gradient_fn=gradient_fn,
        certificate=DecayCertificate(epsilon=1.0, A=0.0, B=1.0, derivative_bounds=(0.0, 0.0, 0.0)),
        max_value=0.0,
        peak=tuple([0.0] * n),
        label="zero",
    )


def make_square_barrier(height: float, left: float = 0.0, right: float = 1.0) -> PotentialField:
    """V = height en [left, right], 0 afuera. No es suave: se integra por tramos."""
    if not height > 0:
        raise ValueError(f"height debe ser > 0 (llegó {height})")
    if not right > left:
        raise ValueError(f"Se necesita left < right (llegó [{left}, {right}])")
    reach = max(abs(left), abs(right))

    def value_fn(x):
        return np.where((x >= left) & (x <= right), height, 0.0)

    def gradient_fn(x):
        return np.zeros(np.shape(x))

    return PotentialField(
        dimension=1,
        kind=PotentialKind.SQUARE_BARRIER,
        value_fn=value_fn,
        gradient_fn=gradient_fn,
        certificate=DecayCertificate(
            epsilon=1.0, A=height * math.exp(reach ** 2), B=1.0,
            derivative_bounds=(height, math.inf, math.inf),
        ),
        max_value=float(height),
        peak=(0.5 * (left + right),),
        label=f"barrier[{left:g},{right:g}]",
        breakpoints=(float(left), float(right)),
        support_interval=(float(left), float(right)),
        smooth=False,
    )


def _locate_peak(value_fn: Evaluator, lo: float, hi: float) -> float:
    """Máximo muestreado y refinado por sección dorada."""
    x = np.linspace(lo, hi, LEVEL_SCAN_POINTS)
    i = int(np.argmax(value_fn(x)))
    if i == 0 or i == len(x) - 1:
        return float(x[i])
    result = minimize_scalar(
        lambda t: -float(value_fn(np.asarray(t))),
        bracket=(x[i - 1], x[i], x[i + 1]),
        method="golden",
        options={"xtol": 1e-12},
    )
    return float(result.x)


def make_gaussian_sum_field(components: Sequence[tuple[float, float, float]]) -> PotentialField:
    """V(x) = Σ a_i·exp(−(x−c_i)²/w_i²) en 1-D; cada componente es (a, w, c)."""
    if not components:
        raise ValueError("Se necesita al menos una componente")
    comps = [(float(a), float(w), float(c)) for a, w, c in components]
    for i, (a, w, _) in enumerate(comps):
        if not (a > 0 and w > 0):
            raise ValueError(f"components[{i}]: amplitud y ancho deben ser > 0")
    amps = np.array([a for a, _, _ in comps])
    widths = np.array([w for _, w, _ in comps])
    centers = np.array([c for _, _, c in comps])

    def value_fn(x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(amps * np.exp(-((x - centers) / widths) ** 2), axis=-1)

    def gradient_fn(x):
        x = np.asarray(x, dtype=float)[..., None]
        d = x - centers
        return np.sum(-2.0 * d / widths ** 2 * amps * np.exp(-(d / widths) ** 2), axis=-1)

    certificate = DecayCertificate(
        epsilon=1.0,
        A=float(np.sum(amps * np.exp(centers ** 2 / widths ** 2))),
        B=float(np.min(1.0 / (2.0 * widths ** 2))),
        derivative_bounds=(
            float(np.sum(amps)),
            float(np.sum(amps * math.sqrt(2.0 / math.e) / widths)),
            float(np.sum(2.0 * amps / widths ** 2)),
        ),
    )
    reach = float(np.max(np.abs(centers) + 4.0 * widths))
    peak = _locate_peak(value_fn, -reach, reach)
    return PotentialField(
        dimension=1,
        kind=PotentialKind.GAUSSIAN_SUM,
        value_fn=value_fn,
        gradient_fn=gradient_fn,
        certificate=certificate,
        max_value=float(value_fn(np.asarray(peak))),
        peak=(peak,),
        label=f"gaussian_sum[{len(comps)}]",
    )


#: e^{−x²} + 0.5·e^{−4(x−3)²}: dos jorobas de anchos distintos.
DEFAULT_ASYMMETRIC_COMPONENTS = ((1.0, 1.0, 0.0), (0.5, 0.5, 3.0))


def make_asymmetric_field(
    components: Sequence[tuple[float, float, float]] = DEFAULT_ASYMMETRIC_COMPONENTS,
) -> PotentialField:
    """
    Contraejemplo: suave, no negativo, superexponencial y NO radial alrededor de ningún
    punto. Se rechazan las sumas concéntricas, que sí son radiales.
    """
    if len(components) < 2:
        raise ValueError("Un campo asimétrico necesita al menos dos componentes")
    centers = {float(c) for _, _, c in components}
    if len(centers) < 2:
        raise ValueError("Todas las componentes comparten centro: el campo sería radial")
    field_ = make_gaussian_sum_field(components)
    return replace(field_, label=f"asymmetric[{len(components)}]")


# ---------- oráculo de conjuntos de nivel ----------

@dataclass(frozen=True)
class LevelSetOracle:
    level: float
    dimension: int
    #: Preimágenes (n=1); vacío para esferas en n ≥ 3.
    points: tuple[float, ...]
    gradient_norms: np.ndarray
    #: Radio de la esfera {V = s} cuando el campo es radial.
    radius: Optional[float] = None

    @property
    def count(self) -> int:
        return len(self.points) if self.dimension == 1 else 1

    @property
    def perimeter(self) -> float:
        """card(V⁻¹(s)) en 1-D; área de la esfera en n ≥ 3."""
        if self.dimension == 1:
            return float(len(self.points))
        return sphere_area(self.dimension, self.radius)

    @property
    def inverse_gradient_sum(self) -> float:
        """a(s) = ∫_{V=s}|∇V|⁻¹dS."""
        if self.dimension == 1:
            return float(np.sum(1.0 / self.gradient_norms))
        return self.perimeter / float(self.gradient_norms[0])

    @property
    def gradient_sum(self) -> float:
        """b(s) = ∫_{V=s}|∇V|dS."""
        if self.dimension == 1:
            return float(np.sum(self.gradient_norms))
        return self.perimeter * float(self.gradient_norms[0])


def level_set_oracle(field_: PotentialField, s: float) -> LevelSetOracle:
    """
    Preimágenes de s con |∇V| en cada una.

    Radial: sale del perfil (esfera de radio R⁻¹(s)). 1-D general: barrido de signos de
    V − s en una grilla acotada por el certificado y `brentq` en cada cambio.
    """
    if not 0 < s < field_.max_value:
        raise ValueError(f"El nivel debe estar en (0, {field_.max_value:.6g}) (llegó {s})")

    if field_.profile is not None:
        r = float(field_.profile.inverse(s))
        g = abs(float(field_.profile.derivative(r)))
        if g < DEGENERATE_GRADIENT:
            raise DegenerateLevelError(f"Nivel crítico s={s:.6g} (|R'| = {g:.2e})", level=s)
        if field_.dimension == 1:
            c = field_.center[0]
            return LevelSetOracle(s, 1, (c - r, c + r), np.array([g, g]), radius=r)
        return LevelSetOracle(s, field_.dimension, (), np.array([g]), radius=r)

    if field_.dimension != 1:
        raise ValueError("Para n ≥ 3 el oráculo solo admite campos radiales")

    L = field_.support_radius(0.5 * s)
    x = np.linspace(-L, L, LEVEL_SCAN_POINTS)
    if field_.breakpoints:
        x = np.union1d(x, np.asarray(field_.breakpoints))
    diff = field_.evaluate(x) - s
    roots: list[float] = []
    for i in np.nonzero(diff == 0.0)[0]:
        roots.append(float(x[i]))
    for i in np.nonzero(diff[:-1] * diff[1:] < 0)[0]:
        roots.append(
            brentq(lambda t: float(field_.evaluate(np.asarray(t))) - s, x[i], x[i + 1], xtol=1e-14)
        )
    roots.sort()
    norms = np.asarray(field_.gradient_norm(np.array(roots)), dtype=float)
    if len(roots) and np.min(norms) < DEGENERATE_GRADIENT:
        raise DegenerateLevelError(f"Nivel crítico s={s:.6g}", level=s)
    logger.debug(f"Nivel {s:.6g}: {len(roots)} preimágenes")
    return LevelSetOracle(s, 1, tuple(roots), norms)
