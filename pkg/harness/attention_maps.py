"""
harness/attention_maps.py -- Exportacion de mapas de atencion por cabeza.

Para cada cabeza seleccionada se escribe, por sitio i, el maximo max_j alpha_ij
de la capa de atencion elegida, como campo STFL real (cutoff 0, un canal, en la
rejilla de esa capa) y como CSV con una fila por sitio.

El mapa se toma sobre la irrep trivial de los pesos alpha. Como alpha es
invariante, rotar la entrada 90 grados produce el mismo mapa permutado.
"""
import csv
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError
from core.field import FieldBatch, FourierField, SiteLayout
from core.field_io import write_field
from core.group_math import trivial_index
from layers.attention import check_attention_rows
from layers.registry import ForwardContext
from training.model import ModelSpec, forward
from training.params import ParamStore

ATTENTION_TYPES = ("steerable_self_attention", "encoder_block")


def attention_map(alpha: np.ndarray, head: int, dim: int = 2,
                  irrep_position: Optional[int] = None) -> np.ndarray:
    """
    alpha [B, h, R, N, N] -> max_j alpha_ij [N] de la primera muestra.

    Sin irrep_position se usa la irrep trivial; el cutoff se deduce de R.
    """
    heads = alpha.shape[1]
    if not 0 <= head < heads:
        raise InvalidArgumentError(f"Cabeza {head} fuera de rango [0, {heads})")
    if irrep_position is None:
        r_count = alpha.shape[2]
        cutoff = (r_count - 1) // 2 if dim == 2 else r_count - 1
        irrep_position = trivial_index(dim, cutoff)
    return alpha[0, head, irrep_position].max(axis=-1)


def _attention_layers(model: ModelSpec) -> list:
    found = [layer for layer in model.layers if layer.LAYER_TYPE in ATTENTION_TYPES]
    if not found:
        raise InvalidArgumentError("El modelo no contiene capas de atencion")
    return found


def _attention_layer(model: ModelSpec, key: str):
    for layer in _attention_layers(model):
        candidates = layer.sublayers() if hasattr(layer, "sublayers") else [layer]
        for sub in candidates:
            if sub.name == key:
                return sub
    raise InvalidArgumentError(f"Capa de atencion desconocida: {key}")


def _map_field(values: np.ndarray, layout: SiteLayout) -> FourierField:
    return FourierField(layout, 0, 1, {0: values.reshape(-1, 1, 1).astype(np.complex128)})


def _write_csv(values: np.ndarray, layout: SiteLayout, path: Path):
    coords = layout.coordinates()
    axes = ["x", "y", "z"][:layout.dim]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["site", *axes, "max_attention"])
        for i, (c, v) in enumerate(zip(coords, values)):
            writer.writerow([i, *(f"{x:g}" for x in c), repr(float(v))])


def compute_attention_maps(model: ModelSpec, params: ParamStore, field_: FourierField,
                           layer_name: Optional[str] = None) -> tuple[str, np.ndarray, SiteLayout]:
    """Ejecuta el modelo en evaluacion y devuelve (capa, alpha, rejilla de la capa)."""
    if not field_.layout.is_grid:
        raise InvalidArgumentError("export_attention_maps requiere un campo en rejilla")
    _attention_layers(model)
    ctx = ForwardContext(train=False, record_attention=True)
    layouts = {}
    x = FieldBatch.from_fields([field_])
    forward(model, params, x, ctx=ctx)
    # Rejilla de entrada de cada capa segun la cadena de formas
    for layer in model.layers:
        if layer.LAYER_TYPE in ATTENTION_TYPES:
            layouts[layer.name] = SiteLayout.grid(layer.input_spec.shape)
    recorded = list(ctx.attention)
    if layer_name is None:
        key = recorded[0]
    else:
        matches = [k for k in recorded if k == layer_name or k.startswith(f"{layer_name}.")]
        if not matches:
            raise InvalidArgumentError(f"Capa de atencion desconocida: {layer_name}. Registradas: {recorded}")
        key = matches[0]
    owner = next(name for name in layouts if key == name or key.startswith(f"{name}."))
    return key, ctx.attention[key], layouts[owner]


def export_attention_maps(model: ModelSpec, params: ParamStore, field_: FourierField,
                          heads: Optional[Sequence[int]], out_dir: Union[str, Path],
                          layer_name: Optional[str] = None) -> list[Path]:
    """Escribe head<h>.stfl y head<h>.csv por cabeza; heads=None exporta todas."""
    key, alpha, layout = compute_attention_maps(model, params, field_, layer_name)
    check_attention_rows(alpha, _attention_layer(model, key).config.paper_literal_softmax, key)
    num_heads = alpha.shape[1]
    selected = list(range(num_heads)) if heads is None else [int(h) for h in heads]
    for h in selected:
        if not 0 <= h < num_heads:
            raise InvalidArgumentError(f"Cabeza {h} fuera de rango [0, {num_heads})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for h in selected:
        values = attention_map(alpha, h, layout.dim)
        written.append(write_field(_map_field(values, layout), out_dir / f"head{h}.stfl"))
        csv_path = out_dir / f"head{h}.csv"
        _write_csv(values, layout, csv_path)
        written.append(csv_path)
    logger.info(f"[AUDIT] Mapas de atencion de {key} ({len(selected)} cabezas) en {out_dir}")
    return written
