from pydantic import BaseModel, Field, model_validator, validator
from typing import List, Optional, Tuple

from app.enums.potential_kind import PotentialKind
from app.services.moments import DEFAULT_LAMBDAS


def _split_floats(v):
    # "1, 0.5, 0.25" → [1.0, 0.5, 0.25]
    if isinstance(v, str):
        return [float(x) for x in v.replace(";", ",").split(",") if x.strip()]
    return v


class PotentialConfig(BaseModel):
    kind: PotentialKind = PotentialKind.GAUSSIAN
    dimension: int = 1
    amplitude: float = Field(1.0, description="Altura de la gaussiana")
    width: float = Field(1.0, description="Ancho w de exp(−|x−c|²/w²)")
    center: List[float] = Field(default_factory=list, description="Centro; vacío = origen")
    height: float = Field(1.0, description="Altura de la barrera cuadrada")
    left: float = 0.0
    right: float = 1.0
    components: List[Tuple[float, float, float]] = Field(
        default_factory=list, description="(a, w, c) por componente de gaussian_sum"
    )

    @validator('kind', pre=True)
    def validate_kind(cls, v):
        if isinstance(v, str):
            if not PotentialKind.is_valid(v):
                raise ValueError(f'kind inválido. Debe ser uno de: {", ".join(PotentialKind.get_all_values())}')
            return PotentialKind(v.lower())
        return v

    @validator('dimension')
    def validate_dimension(cls, v):
        if v < 1 or v % 2 == 0:
            raise ValueError('dimension debe ser un entero impar positivo')
        return v

    @validator('amplitude', 'width', 'height')
    def validate_positive(cls, v):
        if not v > 0:
            raise ValueError('debe ser > 0')
        return v

    @validator('center', pre=True)
    def parse_center(cls, v):
        return _split_floats(v)

    @validator('components', pre=True)
    def parse_components(cls, v):
        # "1,1,0; 0.5,0.5,3"
        if isinstance(v, str):
            triples = []
            for chunk in v.split(";"):
                if not chunk.strip():
                    continue
                parts = [float(x) for x in chunk.split(",")]
                if len(parts) != 3:
                    raise ValueError(f'cada componente es "a, w, c" (llegó "{chunk.strip()}")')
                triples.append(tuple(parts))
            return triples
        return v

    @validator('right')
    def validate_interval(cls, v, values):
        if 'left' in values and not v > values['left']:
            raise ValueError('right debe ser mayor que left')
        return v


class PairConfig(BaseModel):
    t0: float = 1.0
    T: float = 3.0
    k_max: int = Field(20, description="Derivada más alta de f que se va a pedir")

    @validator('T')
    def validate_support(cls, v, values):
        t0 = values.get('t0')
        if t0 is not None and not 0 < t0 < v:
            raise ValueError('se necesita 0 < t0 < T')
        return v

    @validator('k_max')
    def validate_k_max(cls, v):
        if v < 3:
            raise ValueError('k_max debe ser >= 3')
        return v


class ResonanceConfig(BaseModel):
    h: float = 1.0
    re_min: Optional[float] = None
    re_max: Optional[float] = None
    im_min: Optional[float] = None
    im_max: Optional[float] = None
    max_count: Optional[int] = None

    @validator('h')
    def validate_h(cls, v):
        if not v > 0:
            raise ValueError('h debe ser > 0')
        return v

    @model_validator(mode='after')
    def validate_window(self):
        corners = (self.re_min, self.re_max, self.im_min, self.im_max)
        given = [c is not None for c in corners]
        if any(given) and not all(given):
            raise ValueError('la ventana necesita re_min, re_max, im_min e im_max juntos')
        return self

    @property
    def window(self) -> Optional[Tuple[float, float, float, float]]:
        if self.re_min is None:
            return None
        return (self.re_min, self.re_max, self.im_min, self.im_max)


class TraceConfig(BaseModel):
    h_list: List[float] = Field(default_factory=lambda: [2.0 ** -j for j in range(7)])
    resonance_min_h: Optional[float] = Field(
        None, description="Desde este h hacia arriba también se evalúa el lado de resonancias"
    )

    @validator('h_list', pre=True)
    def parse_h_list(cls, v):
        return _split_floats(v)

    @validator('h_list')
    def validate_h_list(cls, v):
        if len(v) < 1 or any(not h > 0 for h in v):
            raise ValueError('h_list necesita valores positivos')
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError('h_list debe ser estrictamente decreciente')
        return v


class MomentConfig(BaseModel):
    K: Optional[int] = Field(None, description="Último k; por defecto n + 12")
    lambdas: List[float] = Field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    source: str = Field("extracted", description="'extracted' (asintótica en λ) o 'direct' (cuadratura)")
    direct_count: int = Field(30, description="Cantidad de momentos cuando source = direct")

    @validator('lambdas', pre=True)
    def parse_lambdas(cls, v):
        return _split_floats(v)

    @validator('lambdas')
    def validate_lambdas(cls, v):
        if any(not lam >= 1 for lam in v):
            raise ValueError('todos los λ deben ser >= 1')
        return v

    @validator('source')
    def validate_source(cls, v):
        if v not in ('extracted', 'direct'):
            raise ValueError("source debe ser 'extracted' o 'direct'")
        return v

    @validator('direct_count')
    def validate_direct_count(cls, v):
        if v < 7:
            raise ValueError('direct_count debe ser >= 7')
        return v


class InversionConfig(BaseModel):
    nodes: Optional[int] = None
    tikhonov: Optional[float] = None
    cs_tolerance: Optional[float] = None
    reference_amplitude: Optional[float] = Field(None, description="Perfil de referencia A·exp(−r²/w²)")
    reference_width: Optional[float] = None
    levels: int = Field(40, description="Niveles del certificado con el oráculo")

    @validator('nodes', 'levels')
    def validate_counts(cls, v):
        if v is not None and v < 10:
            raise ValueError('debe ser >= 10')
        return v

    @validator('tikhonov', 'cs_tolerance', 'reference_amplitude', 'reference_width')
    def validate_positive(cls, v):
        if v is not None and not v > 0:
            raise ValueError('debe ser > 0')
        return v


class RunSection(BaseModel):
    output_dir: Optional[str] = None
    seed: Optional[int] = None
    threads: Optional[int] = None

    @validator('threads')
    def validate_threads(cls, v):
        if v is not None and v < 1:
            raise ValueError('threads debe ser >= 1')
        return v


class RunConfig(BaseModel):
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    pair: PairConfig = Field(default_factory=PairConfig)
    resonances: ResonanceConfig = Field(default_factory=ResonanceConfig)
    trace: TraceConfig = Field(default_factory=TraceConfig)
    moments: MomentConfig = Field(default_factory=MomentConfig)
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    run: RunSection = Field(default_factory=RunSection)
