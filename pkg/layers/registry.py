"""
layers/registry.py -- Registro de tipos de capa, contexto de ejecucion y base comun.

Cada tipo de capa se registra con un decorador bajo un nombre estable. Las
auditorias de equivarianza se enlazan por separado (harness/bindings.py) con
otro decorador; check_audit_coverage() falla si una capa de campos registrada no
tiene enlace de auditoria.

Uso:
    @LAYERS.register("harmonic_nonlinearity")
    class HarmonicNonlinearity(Layer):
        ...

    @LAYERS.bind_audit("harmonic_nonlinearity")
    def _audit_harmonic(dim, cutoff, rng):
        ...
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError, NumericError, ShapeChainError, SteerkitError
from core.field import FieldBatch

FAMILY_FIELD = "field"
FAMILY_VECTOR = "vector"


# ---------------------------------------------------------------------------
# Descriptores de forma
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    """
    Forma de un lote de campos entre capas.

    Atributos:
        dim: 2 o 3.
        cutoff: K o L.
        channels: Canales.
        layout: "grid" o "points".
        shape: Forma de la rejilla, o (N,) para nubes de puntos.
    """
    dim: int
    cutoff: int
    channels: int
    layout: str = "grid"
    shape: tuple[int, ...] = ()

    @property
    def is_grid(self) -> bool:
        return self.layout == "grid"

    @property
    def num_sites(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 0

    def replace(self, **changes) -> "FieldSpec":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return FieldSpec(**values)

    def describe(self) -> str:
        return f"{self.layout}{self.shape} C={self.channels} cutoff={self.cutoff}"


@dataclass(frozen=True)
class VectorSpec:
    """Vector real de caracteristicas por muestra."""
    features: int

    def describe(self) -> str:
        return f"vector[{self.features}]"


Spec = Union[FieldSpec, VectorSpec]


def spec_of(batch: FieldBatch) -> FieldSpec:
    layout = batch.layout
    shape = layout.shape if layout.is_grid else (layout.num_sites,)
    return FieldSpec(batch.dim, batch.cutoff, batch.channels, layout.kind, tuple(shape))


# ---------------------------------------------------------------------------
# Contexto de ejecucion
# ---------------------------------------------------------------------------

@dataclass
class ForwardContext:
    """
    Estado de una pasada hacia adelante.

    Atributos:
        train: Modo entrenamiento (estadisticas de lote, dropout).
        rng: Generador para dropout.
        dropout: Permite desactivar dropout en modo train (auditoria de gradientes).
        update_stats: Si False, las estadisticas acumuladas no se modifican.
        freeze_gates: Reutiliza las mascaras ReLU guardadas en gates.
        gates: {clave: mascara booleana} registradas durante la pasada.
        record_attention: Guarda los pesos alpha de cada capa de atencion.
        attention: {nombre de capa: alpha [B, h, R, N, N]}.
    """
    train: bool = False
    rng: Optional[np.random.Generator] = None
    dropout: bool = True
    update_stats: bool = True
    freeze_gates: bool = False
    gates: dict[str, np.ndarray] = field(default_factory=dict)
    record_attention: bool = False
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    def gate(self, key: str, compute: Callable[[], np.ndarray]) -> np.ndarray:
        """Mascara de activacion; congelada si freeze_gates y ya existe."""
        if self.freeze_gates and key in self.gates:
            return self.gates[key]
        mask = compute()
        self.gates[key] = mask
        return mask


def check_finite(layer: str, value: Any):
    """Lanza NumericError si value (arreglo o lote de campos) tiene no finitos."""
    arrays = value.data.values() if isinstance(value, FieldBatch) else [value]
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError("Activacion no finita", layer=layer)


# ---------------------------------------------------------------------------
# Base de capas
# ---------------------------------------------------------------------------

class Layer:
    """
    Capa con adjunto manual.

    Subclases implementan output_spec, register, forward y backward. Los
    parametros viven en un ParamStore bajo el prefijo "<name>.".
    """
    LAYER_TYPE: str = ""
    FAMILY: str = FAMILY_FIELD

    def __init__(self, name: str):
        self.name = name
        self.input_spec: Optional[Spec] = None

    def key(self, local: str) -> str:
        return f"{self.name}.{local}"

    def build(self, input_spec: Spec) -> Spec:
        """Fija la forma de entrada y devuelve la de salida."""
        self.input_spec = input_spec
        return self.output_spec(input_spec)

    def output_spec(self, spec: Spec) -> Spec:
        raise NotImplementedError

    def register(self, store, rng: np.random.Generator):
        """Registra parametros; por defecto la capa no tiene ninguno."""

    def forward(self, store, x, ctx: ForwardContext):
        raise NotImplementedError

    def backward(self, store, cache, gy):
        raise NotImplementedError

    def require_field(self, spec: Spec) -> FieldSpec:
        if not isinstance(spec, FieldSpec):
            raise ShapeChainError(f"{self.LAYER_TYPE} espera un campo, recibe {spec.describe()}", field=self.name)
        return spec

    def require_vector(self, spec: Spec) -> VectorSpec:
        if not isinstance(spec, VectorSpec):
            raise ShapeChainError(f"{self.LAYER_TYPE} espera un vector, recibe {spec.describe()}", field=self.name)
        return spec

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


def complex_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Partes real e imaginaria independientes con varianza 1 / (2 fan_in)."""
    std = np.sqrt(1.0 / (2.0 * max(fan_in, 1)))
    return rng.normal(0.0, std, size=shape) + 1j * rng.normal(0.0, std, size=shape)


# ---------------------------------------------------------------------------
# Registro
# ---------------------------------------------------------------------------

class LayerRegistry:
    """
    Registro de tipos de capa y de sus enlaces de auditoria.

    Atributos:
        _types: {layer_type: clase}.
        _bindings: {layer_type: fabrica de objetivos de auditoria}.
    """

    def __init__(self):
        self._types: dict[str, type] = {}
        self._bindings: dict[str, Callable] = {}

    def register(self, layer_type: str, family: str = FAMILY_FIELD):
        """Decorador de clase: registra un tipo de capa."""
        def decorator(cls):
            if layer_type in self._types and self._types[layer_type] is not cls:
                raise SteerkitError(f"Tipo de capa duplicado: {layer_type}")
            cls.LAYER_TYPE = layer_type
            cls.FAMILY = family
            self._types[layer_type] = cls
            logger.debug(f"[LAYERS] Capa registrada: {layer_type} ({family})")
            return cls
        return decorator

    def bind_audit(self, layer_type: str):
        """Decorador de funcion: enlaza la fabrica de auditoria de un tipo de capa."""
        def decorator(func: Callable):
            self._bindings[layer_type] = func
            logger.debug(f"[LAYERS] Auditoria enlazada: {layer_type}")
            return func
        return decorator

    def get(self, layer_type: str) -> type:
        if layer_type not in self._types:
            raise InvalidArgumentError(
                f"Tipo de capa desconocido: {layer_type!r}. Disponibles: {sorted(self._types)}"
            )
        return self._types[layer_type]

    def create(self, layer_type: str, name: str, **kwargs) -> Layer:
        return self.get(layer_type)(name, **kwargs)

    def audit_binding(self, layer_type: str) -> Callable:
        if layer_type not in self._bindings:
            raise InvalidArgumentError(f"Sin auditoria enlazada para {layer_type!r}")
        return self._bindings[layer_type]

    def layer_types(self, family: Optional[str] = None) -> list[str]:
        return sorted(t for t, cls in self._types.items() if family is None or cls.FAMILY == family)

    def audited_types(self) -> list[str]:
        return sorted(self._bindings)

    def missing_audit_bindings(self) -> list[str]:
        return [t for t in self.layer_types(FAMILY_FIELD) if t not in self._bindings]

    def check_audit_coverage(self):
        missing = self.missing_audit_bindings()
        if missing:
            raise SteerkitError(f"Capas sin auditoria de equivarianza: {missing}")
        logger.info(f"[LAYERS] Cobertura de auditoria completa ({len(self._bindings)} tipos)")


LAYERS = LayerRegistry()
