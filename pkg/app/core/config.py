from pydantic import ValidationInfo, field_validator, validator
from pydantic_settings import BaseSettings

#: Niveles que acepta LOG_LEVEL.
_LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


class Settings(BaseSettings):
    """Configuración principal del laboratorio."""

    # =================
    # APLICACIÓN
    # =================
    APP_NAME: str = "Laboratorio de Resonancias"
    APP_VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"

    # Hilos por defecto cuando el CLI no recibe --threads
    LAB_THREADS: int = 1
    OUTPUT_DIR: str = "out"
    RANDOM_SEED: int = 20240917

    # =================
    # CUADRATURA
    # =================
    QUAD_TOL: float = 1e-10               # Tolerancia absoluta de las integrales directas
    MOMENT_QUAD_TOL: float = 1e-11        # Relativa, para ∫Vᵏ y ∫Vᵏ|∇V|²
    ROUTE_AGREEMENT_TOL: float = 1e-6     # Las dos rutas de C_{k,n} deben coincidir a esto
    SUPPORT_TOL: float = 1e-14            # Corte relativo del soporte efectivo de V

    # =================
    # RESONANCIAS
    # =================
    ODE_RTOL: float = 1e-11
    NEWTON_TOL: float = 1e-10
    NEWTON_MAX_ITER: int = 50
    THRESHOLD_RADIUS: float = 1e-3        # Disco excluido alrededor de λ=0
    WINDOW_TRUNCATION_TOL: float = 1e-6   # Aporte máximo de lo que queda fuera de la ventana
    BOX_MAX_DEPTH: int = 40

    # =================
    # TRAZA
    # =================
    WKB_MIN_WAVENUMBER: float = 32.0      # λ/(h·√max V) desde el que la fase sale de WKB
    FIT_MAX_CONDITION: float = 1e8

    # =================
    # INVERSIÓN
    # =================
    INVERSION_NODES: int = 200
    TIKHONOV_WEIGHT: float = 1e-8
    SMIN_FRACTION: float = 1e-3
    CS_TOLERANCE: float = 1e-3
    ILL_POSED_FRACTION: float = 1e-4

    # =================
    # VALIDADORES
    # =================
    @validator('LOG_LEVEL')
    def validate_log_level(cls, v):
        level = v.upper()
        if level not in _LOG_LEVELS:
            raise ValueError(f'LOG_LEVEL debe ser uno de {_LOG_LEVELS} (llegó {v})')
        return level

    @field_validator('LAB_THREADS', 'NEWTON_MAX_ITER', 'INVERSION_NODES', 'BOX_MAX_DEPTH')
    @classmethod
    def validate_positive_int(cls, v, info: ValidationInfo):
        if v < 1:
            raise ValueError(f'{info.field_name} debe ser >= 1 (llegó {v})')
        return v

    @field_validator(
        'QUAD_TOL', 'MOMENT_QUAD_TOL', 'ROUTE_AGREEMENT_TOL', 'SUPPORT_TOL', 'ODE_RTOL',
        'NEWTON_TOL', 'THRESHOLD_RADIUS', 'WINDOW_TRUNCATION_TOL', 'WKB_MIN_WAVENUMBER',
        'FIT_MAX_CONDITION', 'TIKHONOV_WEIGHT', 'SMIN_FRACTION', 'CS_TOLERANCE',
        'ILL_POSED_FRACTION',
    )
    @classmethod
    def validate_positive_tolerance(cls, v, info: ValidationInfo):
        if not v > 0:
            raise ValueError(f'{info.field_name} debe ser positiva (llegó {v})')
        return v

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True


# Instancia global de configuración
settings = Settings()
