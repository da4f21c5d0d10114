from enum import Enum


class PotentialKind(Enum):
    """
    Familia de un potencial, tal como se escribe en la clave `kind` de la config.
    """
    GAUSSIAN = "gaussian"              # A·exp(−|x−c|²/w²), radial
    GAUSSIAN_SUM = "gaussian_sum"      # Suma de gaussianas 1-D (contraejemplo asimétrico)
    SQUARE_BARRIER = "square_barrier"  # Altura constante en [a, b], soporte compacto
    INTERPOLATED = "interpolated"      # Perfil reconstruido desde la distribución
    ZERO = "zero"                      # V ≡ 0

    @classmethod
    def get_all_values(cls) -> list[str]:
        """Retorna una lista con todos los valores aceptados en la config."""
        return [kind.value for kind in cls]

    @classmethod
    def is_valid(cls, kind: str) -> bool:
        return (kind or "").lower() in cls.get_all_values()
