"""
Pares de funciones de prueba (ĝ, g, f) con f(τ²) = g(τ).

- `BumpPair`: ĝ es el bump estándar sobre t₀ < |t| < T, par, no negativo y nulo cerca
  de 0. Es el par admisible para el lado de resonancias.
- `GaussianPair`: f(τ) = e^{−τ}; todo en forma cerrada. Sirve para calibrar la
  integral de momentos y como oráculo de las integrales directas.

Convenciones: g(τ) = (1/π)∫₀^∞ ĝ(t)cos(tτ)dt y f(σ) = (1/π)∫₀^∞ ĝ(t)cos(t√σ)dt. Las
derivadas de f se toman bajo la integral: la k-ésima derivada de z ↦ cos√z es entera,
así que f^{(k)} es suave a través de σ = 0.

El reescalado f_λ(τ) = f(τ/λ) no crea un par nuevo: cada par guarda su `lam` y todas
las evaluaciones lo aplican.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import eval_hermite, jv, spherical_jn

from app.core.config import settings
from app.core.errors import QuadratureError, RouteDisagreementError
from app.services.potentials import sphere_area
from app.services.quadrature import bump_rule, integrate_tail

logger = logging.getLogger(__name__)

#: Orden de la regla fina y de la gruesa con que se controla cada transformada.
FINE_ORDER = 30
COARSE_ORDER = 20
#: Diferencia admitida entre ambas reglas, relativa a ∫|integrando|.
TRANSFORM_TOL = 1e-12
#: Términos de la serie de d^k/dz^k cos√z.
SERIES_TERMS = 48
#: Filas que se evalúan de una vez contra los nodos de la regla.
ROW_BLOCK = 256
#: Por debajo de esto J_μ(z)/z^μ sale de su serie.
SMALL_BESSEL_ARG = 1e-3
MAX_DECAY_RADIUS = 1e5


# ---------- funciones especiales ----------

def cos_sqrt_derivative(z, k: int) -> np.ndarray:
    """
    k-ésima derivada de z ↦ cos√z para z ≥ 0.

    Cerca de 0 (z ≤ max(4, k²)) por su serie de potencias; lejos por la forma cerrada
    (−1)^k 2^{−k} z^{(1−k)/2} j_{k−1}(√z) con Bessel esférica (cos√z si k = 0).
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    near = z <= max(4.0, float(k * k))
    if np.any(near):
        zn = z[near]
        term = np.full_like(zn, (-1) ** k * math.factorial(k) / math.factorial(2 * k))
        total = term.copy()
        for p in range(SERIES_TERMS):
            term = term * (-(p + k + 1) / (p + 1)) * zn / ((2 * p + 2 * k + 1) * (2 * p + 2 * k + 2))
            total += term
        out[near] = total
    far = ~near
    if np.any(far):
        x = np.sqrt(z[far])
        if k == 0:
            out[far] = np.cos(x)
        else:
            out[far] = (-1) ** k * 2.0 ** (-k) * x ** (1 - k) * spherical_jn(k - 1, x)
    return out


def _bessel_power(nu: int, t: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    v^{ν/2}·J_ν(t√v) para ν entero de cualquier signo.

    Con ν = −μ < 0 se usa J_{−μ} = (−1)^μ J_μ y queda (−1)^μ t^μ J_μ(z)/z^μ, z = t√v,
    que es finito en v = 0.
    """
    root = np.sqrt(v)
    z = t * root
    if nu >= 0:
        return root ** nu * jv(nu, z)
    mu = -nu
    small = z < SMALL_BESSEL_ARG
    safe = np.where(small, 1.0, z)
    ratio = np.where(
        small,
        (1.0 - z ** 2 / (4.0 * (mu + 1)) + z ** 4 / (32.0 * (mu + 1) * (mu + 2)))
        / (2.0 ** mu * math.factorial(mu)),
        jv(mu, safe) / safe ** mu,
    )
    return (-1) ** mu * t ** mu * ratio


def _check_odd_dimension(n: int) -> None:
    if n < 1 or n % 2 == 0:
        raise ValueError(f"La dimensión debe ser un entero impar positivo (llegó {n})")


# ---------- bump ----------

@dataclass(frozen=True)
class BumpSpec:
    """Soporte t₀ < |t| < T del bump estándar exp(−1/(1−u²))."""

    t0: float = 1.0
    T: float = 3.0

    def __post_init__(self):
        if not 0 < self.t0 < self.T:
            raise ValueError(f"Se necesita 0 < t0 < T (llegó t0={self.t0}, T={self.T})")

    @property
    def center(self) -> float:
        return 0.5 * (self.t0 + self.T)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.T - self.t0)

    def profile(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = (np.abs(t) - self.center) / self.half_width
        inside = np.abs(u) < 1.0
        safe = np.where(inside, u, 0.0)
        return np.where(inside, np.exp(-1.0 / (1.0 - safe ** 2)), 0.0)


# ---------- pares ----------

@dataclass(frozen=True)
class TestFunctionPair(ABC):
    """Par (ĝ, g, f) reescalado por `lam`; las derivadas de f llegan hasta `k_max`."""

    __test__ = False

    k_max: int
    lam: float = 1.0

    def __post_init__(self):
        if self.k_max < 3:
            raise ValueError(f"k_max debe ser >= 3 (llegó {self.k_max})")
        if not self.lam >= 1.0:
            raise ValueError(f"lam debe ser >= 1 (llegó {self.lam})")

    # -- lo que define cada par, en λ = 1 --

    @abstractmethod
    def _ghat(self, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _g(self, tau: np.ndarray, j: int) -> np.ndarray:
        ...

    @abstractmethod
    def _f(self, sigma: np.ndarray, k: int) -> np.ndarray:
        ...

    @abstractmethod
    def _fourier_moment(self, m: int) -> float:
        ...

    @abstractmethod
    def _kernel(self, j: int, v: np.ndarray, n: int) -> np.ndarray:
        ...

    @abstractmethod
    def _leading(self, v: np.ndarray, n: int) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def base_support(self) -> Optional[tuple[float, float]]:
        ...

    @property
    @abstractmethod
    def admissible(self) -> bool:
        """True si ĝ se anula cerca de 0 (lo que pide el lado de resonancias)."""

    # -- interfaz pública, con λ aplicado --

    @property
    def support(self) -> Optional[tuple[float, float]]:
        if self.base_support is None:
            return None
        root = math.sqrt(self.lam)
        return (self.base_support[0] / root, self.base_support[1] / root)

    def ghat(self, t):
        root = math.sqrt(self.lam)
        return root * self._ghat(root * np.asarray(t, dtype=float))

    def g(self, tau, j: int = 0):
        if j < 0:
            raise ValueError(f"j debe ser >= 0 (llegó {j})")
        root = math.sqrt(self.lam)
        return self.lam ** (-0.5 * j) * self._g(np.asarray(tau, dtype=float) / root, j)

    def f(self, sigma, k: int = 0):
        if not 0 <= k <= self.k_max:
            raise ValueError(f"k debe estar en [0, {self.k_max}] (llegó {k})")
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < 0):
            raise ValueError("f solo está definida para σ >= 0")
        return self.lam ** (-k) * self._f(sigma / self.lam, k)

    def fourier_moment(self, m: int) -> float:
        """∫₀^∞ t^m ĝ_λ(t)dt = λ^{−m/2}∫₀^∞ s^m ĝ(s)ds."""
        return self.lam ** (-0.5 * m) * self._fourier_moment(m)

    def phase_space_kernel(self, j: int, v, n: int):
        """∫_{ℝⁿ} f^{(j)}(|ξ|² + v)dξ para v ≥ 0."""
        _check_odd_dimension(n)
        if not 0 <= j <= self.k_max:
            raise ValueError(f"j debe estar en [0, {self.k_max}] (llegó {j})")
        v = np.asarray(v, dtype=float)
        return self.lam ** (0.5 * n - j) * self._kernel(j, v / self.lam, n)

    def leading_kernel(self, v, n: int):
        """∫_{ℝⁿ} f(|ξ|² + v) − f(|ξ|²)dξ para v ≥ 0."""
        _check_odd_dimension(n)
        v = np.asarray(v, dtype=float)
        return self.lam ** (0.5 * n) * self._leading(v / self.lam, n)

    def radial_chunk(self) -> float:
        """Ancho de bloque en ρ para integrar f^{(k)}(ρ²) hacia el infinito."""
        top = 4.0 if self.base_support is None else self.base_support[1]
        return 8.0 * math.pi * math.sqrt(self.lam) / top


@dataclass(frozen=True)
class BumpPair(TestFunctionPair):
    spec: BumpSpec = field(default_factory=BumpSpec)

    @property
    def base_support(self):
        return (self.spec.t0, self.spec.T)

    @property
    def admissible(self) -> bool:
        return True

    def _ghat(self, t):
        return self.spec.profile(t)

    def _transform(
        self,
        rows: np.ndarray,
        kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
        power: int,
        omega: float,
        label: str,
    ) -> np.ndarray:
        """(1/π)∫ ĝ(t) t^power kernel(row, t) dt para cada fila, con control de dos reglas."""
        flat = rows.ravel()
        estimates = []
        for order in (FINE_ORDER, COARSE_ORDER):
            t, w = bump_rule(self.spec.t0, self.spec.T, omega, order)
            weights = w * self.spec.profile(t) * t ** power / math.pi
            values = np.empty_like(flat)
            scale = np.empty_like(flat)
            for start in range(0, len(flat), ROW_BLOCK):
                block = kernel(flat[start:start + ROW_BLOCK, None], t[None, :])
                values[start:start + ROW_BLOCK] = block @ weights
                scale[start:start + ROW_BLOCK] = np.abs(block) @ np.abs(weights)
            estimates.append((values, scale))
        (fine, scale), (coarse, _) = estimates
        bad = np.abs(fine - coarse) > TRANSFORM_TOL * np.maximum(scale, 1e-300)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise QuadratureError(
                f"La transformada de {label} no convergió en {flat[i]:.6g}",
                where=(power, float(flat[i])),
            )
        return fine.reshape(rows.shape)

    def _g(self, tau, j):
        omega = float(np.max(np.abs(tau))) if tau.size else 0.0
        shift = 0.5 * j * math.pi
        return self._transform(
            tau, lambda x, t: np.cos(t * x + shift), j, omega, f"g^({j})"
        )

    def _f(self, sigma, k):
        if not sigma.size:
            return sigma.copy()
        omega = math.sqrt(float(np.max(sigma)))
        try:
            return self._transform(
                sigma, lambda s, t: cos_sqrt_derivative(t ** 2 * s, k), 2 * k, omega, f"f^({k})"
            )
        except QuadratureError as e:
            raise QuadratureError(e.message, where=(k, e.where[1])) from e

    def _fourier_moment(self, m):
        t, w = bump_rule(self.spec.t0, self.spec.T, 0.0, FINE_ORDER)
        return float(np.sum(w * self.spec.profile(t) * t ** m))

    def _kernel(self, j, v, n):
        # n = 2q+1: −(−2π)^q ∫ ĝ t^{−q} (t/2)^j v^{(q+1−j)/2} J_{q+1−j}(t√v) dt
        q = (n - 1) // 2
        if not v.size:
            return v.copy()
        t, w = bump_rule(self.spec.t0, self.spec.T, math.sqrt(float(np.max(v))), FINE_ORDER)
        weights = w * self.spec.profile(t) * t ** (-q) * (0.5 * t) ** j
        flat = v.ravel()
        out = np.empty_like(flat)
        for start in range(0, len(flat), ROW_BLOCK):
            block = _bessel_power(q + 1 - j, t[None, :], flat[start:start + ROW_BLOCK, None])
            out[start:start + ROW_BLOCK] = block @ weights
        return (-((-2.0 * math.pi) ** q) * out).reshape(v.shape)

    def _leading(self, v, n):
        # ∫ f(|ξ|²)dξ = M₀(0) se anula para el bump, así que el núcleo principal es M₀
        return self._kernel(0, v, n)


@dataclass(frozen=True)
class GaussianPair(TestFunctionPair):
    """f(τ) = e^{−τ}, g(τ) = e^{−τ²}, ĝ(t) = √π e^{−t²/4}. No admisible: ĝ(0) ≠ 0."""

    @property
    def base_support(self):
        return None

    @property
    def admissible(self) -> bool:
        return False

    def _ghat(self, t):
        return math.sqrt(math.pi) * np.exp(-0.25 * t ** 2)

    def _g(self, tau, j):
        return (-1) ** j * eval_hermite(j, tau) * np.exp(-tau ** 2)

    def _f(self, sigma, k):
        return (-1) ** k * np.exp(-sigma)

    def _fourier_moment(self, m):
        return math.sqrt(math.pi) * 2.0 ** m * math.gamma(0.5 * (m + 1))

    def _kernel(self, j, v, n):
        return (-1) ** j * math.pi ** (0.5 * n) * np.exp(-v)

    def _leading(self, v, n):
        return math.pi ** (0.5 * n) * np.expm1(-v)


def build_pair(spec: BumpSpec, k_max: int) -> BumpPair:
    pair = BumpPair(k_max=k_max, spec=spec)
    logger.debug(f"Par bump construido: t0={spec.t0}, T={spec.T}, k_max={k_max}")
    return pair


def scale(pair: TestFunctionPair, lam: float) -> TestFunctionPair:
    """(g_λ, f_λ) con f_λ(τ) = f(τ/λ); λ = 1 devuelve el mismo par."""
    if not lam >= 1.0:
        raise ValueError(f"lam debe ser >= 1 (llegó {lam})")
    if lam == 1.0:
        return pair
    return replace(pair, lam=pair.lam * lam)


# ---------- integral de momentos ----------

@dataclass(frozen=True)
class MomentumRoutes:
    k: int
    n: int
    radial: float
    fourier: float
    #: M_k(0) por el núcleo de fase; para el bump es la misma integral que `fourier`.
    kernel: float

    @property
    def relative_gap(self) -> float:
        return abs(self.radial - self.fourier) / max(abs(self.fourier), 1e-300)

    @property
    def value(self) -> float:
        return self.fourier


def _radial_route(pair: TestFunctionPair, k: int, n: int) -> float:
    area = sphere_area(n, 1.0)
    integral = integrate_tail(
        lambda rho: rho ** (n - 1) * pair.f(rho ** 2, k),
        0.0,
        pair.radial_chunk(),
        tol=1e-10,
        order=40,
        quiet_chunks=2,
    )
    return area * integral


def _fourier_route(pair: TestFunctionPair, k: int, n: int) -> float:
    # A·J[g] con J[g] = i^{m+1}∫₀^∞ t^m ĝ y A calibrada con el par gaussiano, m = 2k−n.
    # m+1 es par, así que i^{m+1} = ±1 y se cancela en el cociente.
    m = 2 * k - n
    gaussian_j = math.sqrt(math.pi) * 2.0 ** m * math.gamma(0.5 * (m + 1))
    calibration = (-1) ** k * math.pi ** (0.5 * n) / gaussian_j
    return calibration * pair.fourier_moment(m)


def momentum_routes(pair: TestFunctionPair, k: int, n: int) -> MomentumRoutes:
    _check_odd_dimension(n)
    if k < n:
        raise ValueError(f"La integral de momentos requiere k >= n (llegó k={k}, n={n})")
    if k > pair.k_max:
        raise ValueError(f"k={k} supera k_max={pair.k_max}")
    return MomentumRoutes(
        k=k,
        n=n,
        radial=_radial_route(pair, k, n),
        fourier=_fourier_route(pair, k, n),
        kernel=float(pair.phase_space_kernel(k, np.array(0.0), n)),
    )


def momentum_integral(pair: TestFunctionPair, k: int, n: int) -> float:
    """
    C_{k,n} = ∫_{ℝⁿ} f^{(k)}(|ξ|²)dξ por dos rutas independientes (radial y Fourier).

    Si no coinciden a ROUTE_AGREEMENT_TOL el valor no se entrega.
    """
    routes = momentum_routes(pair, k, n)
    if routes.relative_gap > settings.ROUTE_AGREEMENT_TOL:
        raise RouteDisagreementError(
            f"C_{{{k},{n}}}: radial={routes.radial:.12g} vs Fourier={routes.fourier:.12g} "
            f"(brecha relativa {routes.relative_gap:.2e})",
            radial=routes.radial,
            fourier=routes.fourier,
        )
    return routes.value


def decay_radius(pair: TestFunctionPair, tol: float, j: int = 0) -> float:
    """Frecuencia τ a partir de la cual |g^{(j)}| se queda por debajo de `tol`."""
    if not tol > 0:
        raise ValueError(f"tol debe ser > 0 (llegó {tol})")
    tau = math.sqrt(pair.lam)
    while tau < MAX_DECAY_RADIUS:
        grid = np.linspace(tau, 4.0 * tau, 600)
        if float(np.max(np.abs(pair.g(grid, j)))) < tol:
            return tau
        tau *= 2.0
    raise QuadratureError(f"g^({j}) no baja de {tol:.1e} antes de {MAX_DECAY_RADIUS:g}", where=(j, tau))
