from enum import Enum


class Verdict(Enum):
    """
    Veredicto del certificado de Cauchy–Schwarz sobre los conjuntos de nivel.

    NON-RADIAL no es un error: es el resultado esperado para un potencial asimétrico.
    """
    RADIAL_CONSISTENT = "RADIAL-CONSISTENT"
    NON_RADIAL = "NON-RADIAL"
