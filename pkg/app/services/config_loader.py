"""
Config de corrida: archivo INI plano → `RunConfig`.

Se valida todo al cargar: una clave mal escrita tiene que fallar fuerte y nombrando
`seccion.clave`, no convertirse en un default silencioso a mitad de una corrida larga.
"""

import configparser
import logging
from pathlib import Path
from typing import Union

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.enums.potential_kind import PotentialKind
from app.schemas.run_config import PotentialConfig, RunConfig
from app.services.potentials import (
    PotentialField,
    make_asymmetric_field,
    make_gaussian_profile,
    make_gaussian_sum_field,
    make_square_barrier,
    make_zero_field,
    radialize,
)
from app.services.testfns import BumpPair, BumpSpec, build_pair

logger = logging.getLogger(__name__)


def _location(loc) -> str:
    return ".".join(str(part) for part in loc if not isinstance(part, int)) or "config"


def parse_config(text: str, source: str = "<texto>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # las claves distinguen mayúsculas (K, T)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: INI inválido: {e}") from e

    sections = RunConfig.model_fields
    data: dict[str, dict[str, str]] = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"{source}: sección desconocida [{name}]")
        known = sections[name].annotation.model_fields
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"{source}: clave desconocida {name}.{key}")
            if raw.strip():
                values[key] = raw.strip()
        data[name] = values

    try:
        config = RunConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"{source}: {_location(first['loc'])}: {first['msg']}") from e
    logger.debug(f"Config {source} validada: {sorted(data)}")
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"No existe el archivo de config {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


# ---------- de la config a los objetos numéricos ----------

def build_field(spec: PotentialConfig) -> PotentialField:
    """El PotentialField que describe la sección [potential]."""
    n = spec.dimension
    try:
        if spec.kind == PotentialKind.ZERO:
            return make_zero_field(n)
        if spec.kind == PotentialKind.GAUSSIAN:
            center = spec.center or None
            if center is not None and len(center) != n:
                raise ConfigError(f"potential.center: se esperaban {n} componentes (llegaron {len(center)})")
            return radialize(make_gaussian_profile(spec.amplitude, spec.width), n, center)
        if n != 1:
            raise ConfigError(f"potential.kind: {spec.kind.value} solo existe en dimensión 1")
        if spec.kind == PotentialKind.SQUARE_BARRIER:
            return make_square_barrier(spec.height, spec.left, spec.right)
        if spec.kind == PotentialKind.GAUSSIAN_SUM:
            if not spec.components:
                return make_asymmetric_field()
            centers = {c for _, _, c in spec.components}
            if len(centers) > 1:
                return make_asymmetric_field(spec.components)
            return make_gaussian_sum_field(spec.components)
    except ValueError as e:
        raise ConfigError(f"potential: {e}") from e
    raise ConfigError(f"potential.kind: {spec.kind.value} no se puede construir desde una config")


def build_config_pair(config: RunConfig, k_max: int | None = None) -> BumpPair:
    try:
        spec = BumpSpec(t0=config.pair.t0, T=config.pair.T)
    except ValueError as e:
        raise ConfigError(f"pair: {e}") from e
    return build_pair(spec, max(config.pair.k_max, k_max or 0))
