"""
training/model.py -- Ensamblado del clasificador, pasada hacia adelante y retropropagacion.

La arquitectura es una lista ordenada de descriptores {"type": ..., "name": ..., kwargs}
que se instancian con LAYERS. build_model encadena las formas de capa en capa
y falla con ShapeChainError antes de cualquier calculo si no encajan.

Arquitectura por defecto (rejilla 16 x 16, cutoff 2):
    conv1 (tipo 1, k=5) -> CG -> conv2 (k=3) -> batch norm -> pool 2
    -> encoder -> conv3 (k=3) -> CG -> conv4 (k = extension completa) -> batch norm
    -> norm_flatten -> linear(128) -> batch norm 1d -> ReLU -> dropout(0.7) -> linear(clases)
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger

from core.config import ExperimentConfig
from core.errors import InvalidArgumentError, NumericError, ShapeChainError
from core.field import FieldBatch
from core.group_math import CG_TABLE
from layers import LAYERS, FieldSpec, ForwardContext, Layer, VectorSpec
from layers.conv import KERNEL_FULL
from layers.registry import check_finite, spec_of
from training.data import Batch
from training.params import ParamStore

CONV_TYPES = ("conv_type1", "conv_type2")


# ---------------------------------------------------------------------------
# Especificacion del modelo
# ---------------------------------------------------------------------------

@dataclass
class LayerRecord:
    """Capa instanciada con su forma de salida."""
    layer: Layer
    output_spec: object

    @property
    def name(self) -> str:
        return self.layer.name

    @property
    def layer_type(self) -> str:
        return self.layer.LAYER_TYPE


class ModelSpec:
    """
    Secuencia de capas con formas encadenadas.

    Atributos:
        input_spec: Forma del lote de entrada.
        num_classes: Clases de la salida.
        records: Capas en orden, cada una con su forma de salida.
        descriptors: Descriptores originales (para checkpoints).
    """

    def __init__(self, input_spec: FieldSpec, num_classes: int, descriptors: list[dict]):
        self.input_spec = input_spec
        self.num_classes = int(num_classes)
        self.descriptors = [dict(d) for d in descriptors]
        self.records: list[LayerRecord] = []
        self._build()

    def _build(self):
        spec = self.input_spec
        seen = set()
        for i, desc in enumerate(self.descriptors):
            kwargs = dict(desc)
            layer_type = kwargs.pop("type")
            name = kwargs.pop("name", f"{i:02d}_{layer_type}")
            if name in seen:
                raise ShapeChainError(f"Nombre de capa duplicado: {name}", field=f"model.architecture[{i}]")
            seen.add(name)
            try:
                layer = LAYERS.create(layer_type, name, **kwargs)
            except TypeError as e:
                raise ShapeChainError(f"Argumentos invalidos para {layer_type}: {e}",
                                      field=f"model.architecture[{i}]") from e
            except InvalidArgumentError as e:
                raise ShapeChainError(str(e), field=f"model.architecture[{i}]") from e
            spec = layer.build(spec)
            self.records.append(LayerRecord(layer, spec))
            logger.debug(f"[TRAIN] {name} ({layer_type}) -> {spec.describe()}")
        if spec != VectorSpec(self.num_classes):
            raise ShapeChainError(
                f"La salida del modelo es {spec.describe()}, se esperaba vector[{self.num_classes}]",
                field="model.architecture",
            )

    @property
    def layers(self) -> list[Layer]:
        return [r.layer for r in self.records]

    def layer(self, name: str) -> Layer:
        for r in self.records:
            if r.name == name:
                return r.layer
        raise InvalidArgumentError(f"Capa desconocida: {name}")

    def layers_of_type(self, layer_type: str) -> list[Layer]:
        return [r.layer for r in self.records if r.layer_type == layer_type]

    def init_params(self, seed=0) -> ParamStore:
        """ParamStore con todos los parametros registrados en orden de capa."""
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for layer in self.layers:
            layer.register(store, rng)
        logger.info(f"[TRAIN] Modelo con {len(self.records)} capas y {store.num_trainable()} parametros reales entrenables")
        return store

    def summary(self) -> list[dict]:
        return [{"name": r.name, "type": r.layer_type, "output": r.output_spec.describe()} for r in self.records]


# ---------------------------------------------------------------------------
# Construccion desde la configuracion
# ---------------------------------------------------------------------------

def default_architecture(config: ExperimentConfig, num_classes: int) -> list[dict]:
    m = config.model
    encoder = {"type": "encoder_block", "name": "enc1"}
    arch = [
        {"type": "conv_type1", "name": "conv1", "out_channels": m.channels, "kernel_size": m.kernel_size},
        {"type": "cg_nonlinearity", "name": "cg1"},
        {"type": "conv_type2", "name": "conv2", "out_channels": m.d_model, "kernel_size": 3},
        {"type": "steerable_batch_norm", "name": "bn1"},
        {"type": "avg_pool", "name": "pool1", "stride": 2},
    ]
    if m.use_encoder:
        arch.append(encoder)
    arch += [
        {"type": "conv_type2", "name": "conv3", "out_channels": m.d_model, "kernel_size": 3},
        {"type": "cg_nonlinearity", "name": "cg2"},
        {"type": "conv_type2", "name": "conv4", "out_channels": m.d_model, "kernel_size": KERNEL_FULL},
        {"type": "steerable_batch_norm", "name": "bn2"},
        {"type": "norm_flatten", "name": "flatten"},
        {"type": "linear", "name": "fc1", "out_features": m.hidden},
        {"type": "batch_norm_1d", "name": "bn_fc"},
        {"type": "relu", "name": "relu"},
        {"type": "dropout", "name": "dropout"},
        {"type": "linear", "name": "fc2", "out_features": num_classes},
    ]
    return arch


def _with_defaults(descriptors: list[dict], config: ExperimentConfig, num_classes: int) -> list[dict]:
    """Completa kwargs omitidos con los valores de la seccion model."""
    m = config.model
    out = []
    for i, desc in enumerate(descriptors):
        d = dict(desc)
        t = d.get("type")
        if t in CONV_TYPES:
            d.setdefault("radial_resolution", m.radial_resolution)
            d.setdefault("angular_resolution", m.angular_resolution)
        elif t == "encoder_block":
            for key in ("heads", "layers", "mixing_w1", "mixing_w2", "paper_literal_softmax",
                        "literal_key_index", "ln_sqrt"):
                d.setdefault(key, getattr(m, key))
        elif t == "steerable_self_attention":
            for key in ("heads", "mixing_w1", "mixing_w2", "paper_literal_softmax", "literal_key_index"):
                d.setdefault(key, getattr(m, key))
        elif t == "dropout":
            d.setdefault("p", m.dropout)
        elif t == "linear":
            d.setdefault("out_features", num_classes if i == len(descriptors) - 1 else m.hidden)
        out.append(d)
    return out


def build_model(config: ExperimentConfig, num_classes: Optional[int] = None) -> ModelSpec:
    """ModelSpec validado para la configuracion (arquitectura explicita o por defecto)."""
    classes = num_classes if num_classes is not None else config.dataset.num_classes
    size = config.dataset.size
    input_spec = FieldSpec(config.dimension, config.model.cutoff, 1, "grid", (size,) * config.dimension)
    arch = config.model.architecture or default_architecture(config, classes)
    if config.dimension == 3:
        CG_TABLE.precompute(config.model.cutoff)
    model = ModelSpec(input_spec, classes, _with_defaults(arch, config, classes))
    logger.info(f"[TRAIN] Arquitectura validada: {len(model.records)} capas, entrada {input_spec.describe()}")
    return model


# ---------------------------------------------------------------------------
# Adelante / atras
# ---------------------------------------------------------------------------

def forward(model: ModelSpec, params: ParamStore, fields: FieldBatch, train: bool = False,
            rng: Optional[np.random.Generator] = None,
            ctx: Optional[ForwardContext] = None) -> tuple[np.ndarray, list]:
    """Logits [B, clases] y caches por capa."""
    got = spec_of(fields)
    if got != model.input_spec:
        raise ShapeChainError(f"Entrada {got.describe()}, el modelo espera {model.input_spec.describe()}",
                              field="batch")
    if ctx is None:
        ctx = ForwardContext(train=train, rng=rng)
    x = fields
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(params, x, ctx)
        check_finite(layer.name, x)
        caches.append(cache)
    return x, caches


def backward(model: ModelSpec, params: ParamStore, caches: list, g_logits: np.ndarray):
    """Propaga g_logits acumulando en params.grad."""
    g = g_logits
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        g = layer.backward(params, cache, g)
    return g


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Entropia cruzada media y su gradiente respecto de los logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_p = shifted - log_z
    b = logits.shape[0]
    loss = -float(np.mean(log_p[np.arange(b), labels]))
    grad = np.exp(log_p)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def forward_backward(model: ModelSpec, params: ParamStore, batch: Batch,
                     ctx: ForwardContext) -> tuple[float, np.ndarray]:
    """Perdida y logits; deja en params.grad el gradiente completo."""
    params.zero_grad()
    logits, caches = forward(model, params, batch.fields, ctx=ctx)
    loss, g_logits = cross_entropy(logits, batch.labels)
    if not np.isfinite(loss):
        raise NumericError(f"Perdida no finita: {loss}", layer="loss")
    backward(model, params, caches, g_logits)
    return loss, logits


def loss_and_backward(model: ModelSpec, params: ParamStore, batch: Batch,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Entropia cruzada media en modo entrenamiento; rellena params.grad."""
    loss, _ = forward_backward(model, params, batch, ForwardContext(train=True, rng=rng))
    return loss


def predict(model: ModelSpec, params: ParamStore, fields: FieldBatch) -> np.ndarray:
    logits, _ = forward(model, params, fields, train=False)
    return logits
