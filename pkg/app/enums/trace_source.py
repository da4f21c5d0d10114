from enum import Enum


class TraceSource(Enum):
    """De qué oráculo salió el valor de traza que alimentó el ajuste en h."""
    RESONANCE = "resonance"            # Suma sobre resonancias + término de umbral
    SPECTRAL_SHIFT = "spectral_shift"  # Fase de dispersión (Birman–Krein)


class MomentSource(Enum):
    """Origen de una tabla de momentos."""
    FITTED = "fitted"                  # Extraída de la asintótica en λ de los invariantes
    DIRECT_ORACLE = "direct-oracle"    # Cuadratura directa de ∫Vᵏ y ∫Vᵏ|∇V|²
