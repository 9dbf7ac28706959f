"""
core/config.py -- Configuracion de experimentos (YAML -> dataclasses validadas).

El documento se lee con yaml.safe_load, los valores '${VAR}' se sustituyen con
variables de entorno (el CLI carga .env con python-dotenv) y cada seccion se
convierte en su dataclass. Claves desconocidas, tipos incorrectos y valores
fuera de rango lanzan ConfigError con la ruta punteada del campo.

Esquema publicado en docs/config_schema.md.
"""
import os
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

import yaml
from loguru import logger

from core.errors import ConfigError

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "config" / "settings.yaml"
MIXING_MODES = ("identity", "shared-scalar", "full-matrix")
DATASET_KINDS = ("synthetic", "idx")


# ---------------------------------------------------------------------------
# Secciones
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    """
    Hiperparametros del modelo.

    Atributos:
        cutoff: K (2D) o L (3D).
        radial_resolution, angular_resolution: r y A de las bases de kernel.
        kernel_size: Kernel de la primera convolucion.
        channels: Canales de la primera convolucion.
        d_model: Canales del resto de la red y del encoder.
        heads, layers: Cabezas y capas de cada encoder.
        mixing_w1, mixing_w2: Modos de mezcla (identity, shared-scalar, full-matrix).
        paper_literal_softmax, literal_key_index, ln_sqrt: Variantes literales.
        use_encoder: False elimina los encoders de la arquitectura por defecto.
        hidden: Ancho de la capa oculta de la cabeza.
        dropout: Probabilidad de dropout.
        architecture: Lista explicita de capas ({"type": ..., kwargs}); reemplaza la
            arquitectura por defecto.
    """
    cutoff: int = 2
    radial_resolution: int = 2
    angular_resolution: int = 40
    kernel_size: int = 5
    channels: int = 8
    d_model: int = 16
    heads: int = 2
    layers: int = 1
    mixing_w1: str = "shared-scalar"
    mixing_w2: str = "identity"
    paper_literal_softmax: bool = False
    literal_key_index: bool = False
    ln_sqrt: bool = False
    use_encoder: bool = True
    hidden: int = 128
    dropout: float = 0.7
    architecture: Optional[list[dict]] = None

    def validate(self, path: str):
        _positive(self, path, "radial_resolution", "angular_resolution", "kernel_size", "channels",
                  "d_model", "heads", "layers", "hidden")
        _require(self.cutoff >= 0, f"{path}.cutoff", f"debe ser >= 0, recibido {self.cutoff}")
        _require(self.kernel_size % 2 == 1, f"{path}.kernel_size", f"debe ser impar, recibido {self.kernel_size}")
        _require(self.d_model % self.heads == 0, f"{path}.heads",
                 f"{self.heads} no divide d_model={self.d_model}")
        for name in ("mixing_w1", "mixing_w2"):
            value = getattr(self, name)
            _require(value in MIXING_MODES, f"{path}.{name}", f"{value!r} no es uno de {MIXING_MODES}")
        _require(0.0 <= self.dropout < 1.0, f"{path}.dropout", f"debe estar en [0, 1), recibido {self.dropout}")
        if self.architecture is not None:
            _require(len(self.architecture) > 0, f"{path}.architecture", "lista vacia")
            for i, entry in enumerate(self.architecture):
                _require("type" in entry, f"{path}.architecture[{i}]", "falta la clave 'type'")


@dataclass
class OptimizerConfig:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    decay_factor: float = 0.5
    decay_every: int = 20
    epochs: int = 30
    batch_size: int = 32

    def validate(self, path: str):
        _positive(self, path, "decay_every", "epochs", "batch_size", "eps")
        _require(self.lr > 0, f"{path}.lr", f"debe ser > 0, recibido {self.lr}")
        _require(self.weight_decay >= 0, f"{path}.weight_decay", f"debe ser >= 0, recibido {self.weight_decay}")
        _require(0 < self.decay_factor <= 1, f"{path}.decay_factor", f"debe estar en (0, 1], recibido {self.decay_factor}")
        for name in ("beta1", "beta2"):
            _require(0 <= getattr(self, name) < 1, f"{path}.{name}", "debe estar en [0, 1)")
        _require(self.batch_size >= 2, f"{path}.batch_size", "batch norm requiere batch_size >= 2")


@dataclass
class DatasetConfig:
    """
    Datos de entrenamiento y prueba.

    kind = "synthetic" genera glifos rotados; kind = "idx" lee los cuatro archivos
    IDX indicados (los escribe gen-data).
    """
    kind: str = "synthetic"
    num_train: int = 2000
    num_test: int = 500
    size: int = 16
    num_classes: int = 4
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    value_range: Optional[list[float]] = None

    def validate(self, path: str):
        _require(self.kind in DATASET_KINDS, f"{path}.kind", f"{self.kind!r} no es uno de {DATASET_KINDS}")
        _positive(self, path, "num_train", "num_test", "size")
        _require(self.num_classes >= 2, f"{path}.num_classes", f"debe ser >= 2, recibido {self.num_classes}")
        if self.kind == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                _require(getattr(self, name) is not None, f"{path}.{name}", "obligatorio con kind: idx")
        if self.value_range is not None:
            _require(len(self.value_range) == 2 and self.value_range[0] < self.value_range[1],
                     f"{path}.value_range", f"se esperaba [lo, hi] con lo < hi, recibido {self.value_range}")

    def idx_paths(self) -> dict[str, Path]:
        return {name: Path(getattr(self, name))
                for name in ("train_images", "train_labels", "test_images", "test_labels")
                if getattr(self, name) is not None}


@dataclass
class EvalConfig:
    test_rotations: int = 4
    tta_rotations: int = 12

    def validate(self, path: str):
        _positive(self, path, "test_rotations", "tta_rotations")


@dataclass
class AuditConfig:
    """Auditorias: muestras de grupo, tolerancias y diferencias finitas."""
    num_group_samples: int = 20
    tolerance: float = 1e-9
    model_tolerance: float = 1e-4
    fd_step: float = 1e-4
    grad_tolerance: float = 1e-4
    grad_coordinates: Optional[int] = None

    def validate(self, path: str):
        _positive(self, path, "num_group_samples", "tolerance", "model_tolerance", "fd_step", "grad_tolerance")
        if self.grad_coordinates is not None:
            _positive(self, path, "grad_coordinates")


@dataclass
class LoggingConfig:
    level: str = "INFO"
    log_dir: str = "logs"

    def validate(self, path: str):
        levels = ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")
        _require(self.level.upper() in levels, f"{path}.level", f"{self.level!r} no es uno de {levels}")


@dataclass
class ExperimentConfig:
    """Documento completo de un experimento."""
    dimension: int = 2
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def validate(self, path: str = ""):
        _require(self.dimension in (2, 3), "dimension", f"debe ser 2 o 3, recibido {self.dimension}")
        _require(self.seed >= 0, "seed", f"debe ser >= 0, recibido {self.seed}")
        for section in ("model", "optimizer", "dataset", "eval", "audit", "logging"):
            getattr(self, section).validate(section)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        config = _build(cls, data or {}, "")
        config.validate()
        return config

    def replace(self, **changes) -> "ExperimentConfig":
        """Copia con cambios (acepta claves punteadas: 'optimizer.epochs')."""
        data = self.to_dict()
        for dotted, value in changes.items():
            target = data
            *parents, leaf = dotted.replace("__", ".").split(".")
            for p in parents:
                target = target[p]
            target[leaf] = value
        return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Validacion generica
# ---------------------------------------------------------------------------

def _require(condition: bool, path: str, message: str):
    if not condition:
        raise ConfigError(message, field=path)


def _positive(obj, path: str, *names: str):
    for name in names:
        value = getattr(obj, name)
        _require(value > 0, f"{path}.{name}", f"debe ser > 0, recibido {value}")


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _coerce(value: Any, hint: Any, path: str) -> Any:
    """Comprueba value contra la anotacion hint; enteros se aceptan como float."""
    origin = typing.get_origin(hint)
    if origin is Union:
        options = typing.get_args(hint)
        if value is None and type(None) in options:
            return None
        for option in options:
            if option is type(None):
                continue
            try:
                return _coerce(value, option, path)
            except ConfigError:
                continue
        raise ConfigError(f"valor {value!r} no coincide con {hint}", field=path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"se esperaba una lista, recibido {type(value).__name__}", field=path)
        (item,) = typing.get_args(hint) or (Any,)
        return [_coerce(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if hint is Any:
        return value
    if hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"se esperaba un mapa, recibido {type(value).__name__}", field=path)
        return dict(value)
    if isinstance(hint, type) and hasattr(hint, "__dataclass_fields__"):
        return _build(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"se esperaba bool, recibido {value!r}", field=path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"se esperaba int, recibido {value!r}", field=path)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"se esperaba float, recibido {value!r}", field=path)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"se esperaba str, recibido {value!r}", field=path)
        return value
    raise ConfigError(f"tipo no soportado {hint}", field=path)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"se esperaba un mapa, recibido {type(data).__name__}", field=path or "<raiz>")
    valid = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(f"clave desconocida (validas: {sorted(valid)})", field=_join(path, unknown[0]))
    hints = typing.get_type_hints(cls)
    values = {key: _coerce(value, hints[key], _join(path, key)) for key, value in data.items()}
    return cls(**values)


# ---------------------------------------------------------------------------
# Carga
# ---------------------------------------------------------------------------

def resolve_env_vars(node: Any) -> Any:
    """Sustituye valores '${VAR}' por la variable de entorno; si falta, advierte y deja None."""
    if isinstance(node, dict):
        return {k: resolve_env_vars(v) for k, v in node.items()}
    if isinstance(node, list):
        return [resolve_env_vars(v) for v in node]
    if isinstance(node, str) and node.startswith("${") and node.endswith("}"):
        name = node[2:-1]
        value = os.getenv(name)
        if value is None:
            logger.warning(f"[CONFIG] Variable de entorno no encontrada: {name}")
        return value
    return node


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Lee y valida un documento de experimento (por defecto config/settings.yaml)."""
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not config_path.exists():
        raise ConfigError(f"No existe el archivo de configuracion: {config_path}", field="--config")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML invalido en {config_path}: {e}", field="--config") from e
    config = ExperimentConfig.from_dict(resolve_env_vars(raw or {}))
    logger.info(f"[CONFIG] Configuracion cargada desde {config_path}")
    return config


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, allow_unicode=True, default_flow_style=False, sort_keys=False)
    return path
