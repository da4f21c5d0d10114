"""
Errores del laboratorio.

Todos heredan de `LabError`, que lleva un `code` estable (lo que el CLI imprime y lo que
los tests comparan) y un mensaje legible. Los errores de precondición sobre argumentos
sueltos siguen siendo `ValueError`: esos son bugs del llamador, no resultados numéricos.
"""

from typing import Optional, Sequence


class LabError(Exception):
    """Error de cálculo. El CLI lo mapea a un código de salida."""

    code = "LAB_ERROR"

    def __init__(self, message: str, code: Optional[str] = None):
        self.message = message
        if code is not None:
            self.code = code
        super().__init__(message)


class ConfigError(LabError):
    """Config de corrida inválida. Siempre nombra `seccion.clave`."""

    code = "CONFIG"


class QuadratureError(LabError):
    """
    Una cuadratura no convergió a la tolerancia pedida.

    `where` son las coordenadas problemáticas (paneles sin converger, o el (k, σ) de una
    derivada de f), para que el mensaje diga DÓNDE y no solo que falló.
    """

    code = "QUADRATURE"

    def __init__(self, message: str, where: Sequence[float] = ()):
        self.where = tuple(where)
        super().__init__(message)


class RouteDisagreementError(LabError):
    """Las dos rutas de la integral de momentos no coinciden: el valor no se entrega."""

    code = "ROUTE_DISAGREEMENT"

    def __init__(self, message: str, radial: float, fourier: float):
        self.radial = radial
        self.fourier = fourier
        super().__init__(message)


class WronskianError(LabError):
    """Falló la propagación de la solución de Jost en un λ concreto."""

    code = "WRONSKIAN"

    def __init__(self, message: str, lam: complex):
        self.lam = lam
        super().__init__(message)


class BoundaryTooCoarseError(LabError):
    """El seguimiento de fase sobre el borde de un rectángulo no se pudo resolver."""

    code = "BOUNDARY_TOO_COARSE"


class DegenerateLevelError(LabError):
    """El nivel pedido es un valor crítico de V (|∇V| ≈ 0 en una preimagen)."""

    code = "DEGENERATE_LEVEL"

    def __init__(self, message: str, level: float):
        self.level = level
        super().__init__(message)


class MonotonicityError(LabError):
    """Una función de distribución o densidad perdió la monotonía que exige la teoría."""

    code = "MONOTONICITY"


class SingularFlowError(LabError):
    """La EDO de línea de flujo se detuvo lejos del pico (R' → 0 donde no debe)."""

    code = "SINGULAR_FLOW"


class IllConditionedFitError(LabError):
    """El ajuste en h tiene número de condición por encima del límite configurado."""

    code = "ILL_CONDITIONED_FIT"

    def __init__(self, message: str, condition: float):
        self.condition = condition
        super().__init__(message)
