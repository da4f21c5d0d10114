"""
Invariantes de momentos M_k = ∫Vᵏ y N_k = ∫Vᵏ|∇V|².

Se extraen de la asintótica en λ de los dos invariantes de traza con el par reescalado:

    I₁(f_λ)·λ^{−n/2}  = Σ_{k≥1} C_{k,n}·M_k/k! · λ^{−k}
    I₂(f_λ)·λ^{3−n/2} = Σ_{k≥0} C_{k+3,n}·N_k/k! · λ^{−k}

con C_{k,n} = ∫f^{(k)}(|ξ|²)dξ. La extracción es por deflación: se ajusta el término más
bajo en s = 1/λ, se resta y se sigue con el siguiente.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import RouteDisagreementError
from app.core.workers import run_parallel
from app.enums.trace_source import MomentSource
from app.services.potentials import PotentialField, sphere_area
from app.services.quadrature import integrate
from app.services.testfns import TestFunctionPair, momentum_integral, scale
from app.services.trace import direct_leading, direct_subleading

logger = logging.getLogger(__name__)

#: λ = 2^{j/4}, j = 0..24.
DEFAULT_LAMBDAS = tuple(2.0 ** (j / 4.0) for j in range(25))
#: Términos de más que entran en cada ajuste de la deflación.
DEFLATION_PAD = 2
#: Grados extra que se prueban al buscar dónde se estabiliza cada coeficiente.
MAX_EXTRA_DEGREE = 6
#: Residuo de extracción (relativo a |M_k|) a partir del cual k se marca como no confiable.
UNRELIABLE_FRACTION = 1e-3
#: Tolerancia relativa de las integrales directas que alimentan la extracción.
EVALUATOR_TOL = 1e-13
#: K por defecto: n + DEFAULT_K_OFFSET.
DEFAULT_K_OFFSET = 12


@dataclass(frozen=True)
class MomentTable:
    dimension: int
    ks: Tuple[int, ...]
    M: Tuple[float, ...]
    N: Tuple[float, ...]
    source: MomentSource
    m_residuals: Tuple[float, ...] = ()
    n_residuals: Tuple[float, ...] = ()
    #: k cuya extracción superó el residuo admitido.
    unreliable: Tuple[int, ...] = ()
    leading_exponent: Optional[float] = None

    def moment(self, k: int) -> float:
        return self.M[self.ks.index(k)]

    def gradient_moment(self, k: int) -> float:
        return self.N[self.ks.index(k)]

    def reliable(self) -> "MomentTable":
        """La tabla sin los k marcados como no confiables."""
        keep = [i for i, k in enumerate(self.ks) if k not in self.unreliable]
        pick = lambda values: tuple(values[i] for i in keep) if values else ()
        return MomentTable(
            dimension=self.dimension,
            ks=pick(self.ks),
            M=pick(self.M),
            N=pick(self.N),
            source=self.source,
            m_residuals=pick(self.m_residuals),
            n_residuals=pick(self.n_residuals),
            leading_exponent=self.leading_exponent,
        )

    def rows(self):
        m_res = self.m_residuals or (0.0,) * len(self.ks)
        n_res = self.n_residuals or (0.0,) * len(self.ks)
        return [
            (k, m, nk, mr, nr, self.source.value)
            for k, m, nk, mr, nr in zip(self.ks, self.M, self.N, m_res, n_res)
        ]


# ---------- oráculo directo ----------

def direct_moments(field_: PotentialField, ks: Sequence[int], *, tol: Optional[float] = None) -> MomentTable:
    """∫Vᵏ y ∫Vᵏ|∇V|² por cuadratura adaptiva sobre el soporte certificado."""
    ks = tuple(int(k) for k in ks)
    if any(k < 1 for k in ks):
        raise ValueError("Los momentos se piden para k >= 1")
    tol = settings.MOMENT_QUAD_TOL if tol is None else tol
    n = field_.dimension
    if field_.max_value == 0:
        zeros = (0.0,) * len(ks)
        return MomentTable(n, ks, zeros, zeros, MomentSource.DIRECT_ORACLE)

    if n == 1:
        a, b = field_.truncation_interval()

        def integral(fn):
            return integrate(fn, a, b, breakpoints=field_.breakpoints, tol=1e-300, rel_tol=tol)

        value, grad2 = field_.evaluate, (lambda x: field_.gradient(x) ** 2)
    else:
        if field_.profile is None:
            raise ValueError("Para n >= 3 los momentos requieren un campo radial")
        radius = field_.radial_extent()
        area = sphere_area(n, 1.0)

        def integral(fn):
            return area * integrate(lambda r: r ** (n - 1) * fn(r), 0.0, radius, tol=1e-300, rel_tol=tol)

        value, grad2 = field_.profile.evaluate, (lambda r: field_.profile.derivative(r) ** 2)

    M = tuple(integral(lambda x, k=k: value(x) ** k) for k in ks)
    N = tuple(integral(lambda x, k=k: value(x) ** k * grad2(x)) for k in ks)
    return MomentTable(n, ks, M, N, MomentSource.DIRECT_ORACLE)


# ---------- evaluadores de invariantes ----------

@dataclass(frozen=True)
class InvariantEvaluators:
    """I₁(par) e I₂(par) para un campo fijo."""

    first: Callable[[TestFunctionPair], float]
    second: Callable[[TestFunctionPair], float]


def direct_evaluators(field_: PotentialField, tol: float = EVALUATOR_TOL) -> InvariantEvaluators:
    return InvariantEvaluators(
        first=lambda pair: direct_leading(field_, pair, tol=tol),
        second=lambda pair: direct_subleading(field_, pair, tol=tol),
    )


@lru_cache(maxsize=512)
def momentum_constant(pair: TestFunctionPair, k: int, n: int) -> Tuple[float, bool]:
    """
    (C_{k,n}, certificado). Con k ≥ n se exige que coincidan las dos rutas; si no, se usa
    la ruta de Fourier sin certificar. Con k < n solo existe el núcleo en v = 0.
    """
    if k < n:
        return float(pair.phase_space_kernel(k, np.array(0.0), n)), True
    try:
        return momentum_integral(pair, k, n), True
    except RouteDisagreementError as e:
        logger.warning(f"{e.message}; se usa la ruta de Fourier sin certificar")
        return e.fourier, False


# ---------- deflación ----------

def _fit_lowest(s: np.ndarray, values: np.ndarray, power: int, degree: int) -> float:
    """Coeficiente de s^power en el ajuste de `values` con la base s^power … s^{power+degree}."""
    design = np.column_stack([s ** (power + i) for i in range(degree + 1)])
    norms = np.linalg.norm(design, axis=0)
    coeffs, *_ = np.linalg.lstsq(design / norms, values, rcond=None)
    return float(coeffs[0] / norms[0])


def _deflate(s: np.ndarray, values: np.ndarray, powers: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Coeficientes de values(s) = Σ c_p s^p para las potencias dadas (crecientes).

    Para cada potencia se ajusta lo que queda con grados crecientes, desde las potencias
    restantes más DEFLATION_PAD hasta MAX_EXTRA_DEGREE más, y se toma el grado donde el
    coeficiente más bajo se estabiliza (el menor salto contra el grado anterior). Ese
    salto es el residuo. El coeficiente elegido se resta y se sigue con la potencia siguiente.
    """
    remaining = values.astype(float).copy()
    coeffs = np.zeros(len(powers))
    residuals = np.zeros(len(powers))
    top = powers[-1] + DEFLATION_PAD
    # el ajuste más largo deja al menos dos grados de libertad
    ceiling = len(s) - 3
    for i, p in enumerate(powers):
        low = max(top - p, 1)
        high = max(min(low + MAX_EXTRA_DEGREE, ceiling), low)
        estimates = np.array([_fit_lowest(s, remaining, p, d) for d in range(low - 1, high + 1)])
        jumps = np.abs(np.diff(estimates))
        best = int(np.argmin(jumps))
        coeffs[i] = estimates[best + 1]
        residuals[i] = jumps[best]
        remaining = remaining - coeffs[i] * s ** p
    return coeffs, residuals


def leading_exponent(lams: Sequence[float], values: Sequence[float], points: int = 4) -> Optional[float]:
    """Pendiente log-log de |I₁| en los `points` λ más grandes."""
    lams = np.asarray(lams, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    order = np.argsort(lams)[-points:]
    if len(order) < 2 or np.any(values[order] <= 0):
        return None
    slope, _ = np.polyfit(np.log(lams[order]), np.log(values[order]), 1)
    return float(slope)


def extract_moments(
    evaluators: InvariantEvaluators,
    pair: TestFunctionPair,
    n: int,
    K: Optional[int] = None,
    lams: Sequence[float] = DEFAULT_LAMBDAS,
    *,
    threads: Optional[int] = None,
) -> MomentTable:
    """
    M_k y N_k para k ∈ [n, K] a partir de I₁(f_λ), I₂(f_λ) en la lista de λ.

    Los términos con C_{k,n} = 0 (k ≤ (n−1)/2) no entran en la deflación.
    """
    K = n + DEFAULT_K_OFFSET if K is None else K
    if K < n:
        raise ValueError(f"K debe ser >= n (llegó K={K}, n={n})")
    if K + 3 > pair.k_max:
        raise ValueError(f"El par necesita k_max >= {K + 3} (tiene {pair.k_max})")
    lams = np.asarray(sorted(lams), dtype=float)
    if len(lams) < K + DEFLATION_PAD + 2:
        raise ValueError(f"Se necesitan al menos {K + DEFLATION_PAD + 2} valores de λ (hay {len(lams)})")

    values = run_parallel(
        lambda lam: (evaluators.first(scale(pair, lam)), evaluators.second(scale(pair, lam))),
        lams.tolist(),
        threads,
    )
    first = np.array([v[0] for v in values])
    second = np.array([v[1] for v in values])
    s = 1.0 / lams

    vanishing = (n - 1) // 2
    first_powers = list(range(vanishing + 1, K + 1))
    a, a_res = _deflate(s, first * lams ** (-0.5 * n), first_powers)
    # I₂: el término k lleva C_{k+3,n}, que nunca se anula para k ≥ 0
    second_powers = list(range(0, K + 1))
    b, b_res = _deflate(s, second * lams ** (3.0 - 0.5 * n), second_powers)

    ks = tuple(range(n, K + 1))
    M, N, m_res, n_res, unreliable = [], [], [], [], []
    for k in ks:
        factorial = math.factorial(k)
        c_first, first_ok = momentum_constant(pair, k, n)
        c_second, second_ok = momentum_constant(pair, k + 3, n)
        i = first_powers.index(k)
        mk = a[i] * factorial / c_first
        nk = b[k] * factorial / c_second
        mr = a_res[i] * factorial / abs(c_first)
        nr = b_res[k] * factorial / abs(c_second)
        M.append(float(mk))
        N.append(float(nk))
        m_res.append(float(mr))
        n_res.append(float(nr))
        scale_m = max(abs(mk), 1e-300)
        scale_n = max(abs(nk), 1e-300)
        noisy = mr > UNRELIABLE_FRACTION * scale_m or nr > UNRELIABLE_FRACTION * scale_n
        if noisy or not (first_ok and second_ok):
            unreliable.append(k)

    if unreliable:
        logger.warning(f"Extracción no confiable para k={unreliable}")
    table = MomentTable(
        dimension=n,
        ks=ks,
        M=tuple(M),
        N=tuple(N),
        source=MomentSource.FITTED,
        m_residuals=tuple(m_res),
        n_residuals=tuple(n_res),
        unreliable=tuple(unreliable),
        leading_exponent=leading_exponent(lams, first),
    )
    logger.info(f"Momentos extraídos k∈[{n},{K}] con {len(lams)} valores de λ")
    return table
