"""
training/data.py -- Datasets de escritorio: glifos rotados sinteticos y archivos IDX.

Glifos: cada clase es un conjunto de segmentos en el disco unidad. Se dibujan
con una rotacion Haar-uniforme y un desplazamiento sub-pixel, con
supermuestreo 3 x 3 (3 x 3 x 3 en voxeles) sobre la rejilla centrada que usa
SiteLayout.grid, de modo que las rotaciones de la imagen y act_group comparten
marco de coordenadas.

IDX (formato clasico MNIST, big-endian):
    imagenes: magic 0x00000803 (0x00000804 para voxeles), n, dims..., pixeles u8
    etiquetas: magic 0x00000801, n, etiquetas u8
Rutas terminadas en .gz se leen y escriben comprimidas.
"""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from loguru import logger

from core.errors import (
    DatasetError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    InvalidArgumentError,
)
from core.field import FieldBatch, FourierField, lift_scalar_image
from core.group_math import Group, as_generator, haar_random_rotation

IDX_LABEL_MAGIC = 0x00000801
IDX_UBYTE = 0x08
GLYPH_SCALE = 0.38
SUPERSAMPLE = 3
MIN_SIZE = 12

# Segmentos (inicio, fin) en coordenadas del disco unidad.
GLYPHS: dict[str, list[tuple[tuple[float, float], tuple[float, float]]]] = {
    "bar": [((-0.9, 0.0), (0.9, 0.0))],
    "L": [((-0.5, 0.75), (-0.5, -0.75)), ((-0.5, -0.75), (0.55, -0.75))],
    "T": [((-0.7, 0.6), (0.7, 0.6)), ((0.0, 0.6), (0.0, -0.9))],
    "cross": [((-0.8, 0.0), (0.8, 0.0)), ((0.0, -0.8), (0.0, 0.8))],
    "V": [((-0.6, 0.7), (0.0, -0.8)), ((0.0, -0.8), (0.6, 0.7))],
    "Z": [((-0.6, 0.7), (0.6, 0.7)), ((0.6, 0.7), (-0.6, -0.7)), ((-0.6, -0.7), (0.6, -0.7))],
    "square": [((-0.6, -0.6), (0.6, -0.6)), ((0.6, -0.6), (0.6, 0.6)),
               ((0.6, 0.6), (-0.6, 0.6)), ((-0.6, 0.6), (-0.6, -0.6))],
    "F": [((-0.4, -0.85), (-0.4, 0.85)), ((-0.4, 0.85), (0.55, 0.85)), ((-0.4, 0.1), (0.35, 0.1))],
}
GLYPH_NAMES = list(GLYPHS)


@dataclass
class Batch:
    """
    Lote etiquetado.

    Atributos:
        fields: FieldBatch [B, ...].
        labels: Indices de clase [B] (int64).
        num_classes: Clases del problema.
    """
    fields: FieldBatch
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.fields.batch_size,):
            raise InvalidArgumentError(
                f"{self.labels.shape[0] if self.labels.ndim else 0} etiquetas para {self.fields.batch_size} campos"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"Etiquetas fuera de [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.size)

    @classmethod
    def from_fields(cls, fields: list[FourierField], labels, num_classes: int) -> "Batch":
        return cls(FieldBatch.from_fields(fields), labels, num_classes)

    def subset(self, indices: np.ndarray) -> "Batch":
        indices = np.asarray(indices)
        return Batch(self.fields.subset(indices), self.labels[indices], self.num_classes)

    def minibatches(self, batch_size: int, rng: Optional[np.random.Generator] = None):
        """Particion en lotes (barajada si se da rng); el ultimo lote de tamano 1 se descarta."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            if idx.size >= 2 or len(self) < 2:
                yield self.subset(idx)


# ---------------------------------------------------------------------------
# Glifos rotados
# ---------------------------------------------------------------------------

def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - a - t[:, None] * ab, axis=-1)


def _subpixel_offsets(dim: int) -> np.ndarray:
    steps = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    mesh = np.meshgrid(*([steps] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def render_glyph(name: str, size: int, rotation: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """
    Intensidad en [0, 1] del glifo con rotacion y desplazamiento dados.

    La dimension sale de la forma de rotation (2x2 o 3x3); en 3D el glifo vive
    en el plano z = 0 antes de rotar.
    """
    if name not in GLYPHS:
        raise InvalidArgumentError(f"Glifo desconocido: {name!r}. Disponibles: {GLYPH_NAMES}")
    dim = rotation.shape[0]
    scale = GLYPH_SCALE * size
    half_stroke = max(1.2, size / 12.0) / 2.0
    axes = [np.arange(size) - (size - 1) / 2.0] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=-1)
    samples = (centers[:, None, :] + _subpixel_offsets(dim)[None]).reshape(-1, dim)
    # Coordenadas del glifo: R^{-1} (p - shift) / scale
    local = (samples - shift) @ rotation / scale
    dist = np.full(local.shape[0], np.inf)
    for start, end in GLYPHS[name]:
        a = np.zeros(dim)
        b = np.zeros(dim)
        a[:2], b[:2] = start, end
        dist = np.minimum(dist, _segment_distance(local, a, b))
    inside = (dist * scale <= half_stroke).astype(np.float64)
    return inside.reshape(-1, SUPERSAMPLE ** dim).mean(axis=1).reshape((size,) * dim)


def render_rotated_shapes(n: int, size: int, num_classes: int, rng=None,
                          dim: int = 2, rotate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """
    Imagenes [n, size^dim] en [0, 1] y etiquetas [n] uniformes.

    rotate=False dibuja los glifos sin rotacion ni desplazamiento.
    """
    if size < MIN_SIZE:
        raise InvalidArgumentError(f"size debe ser >= {MIN_SIZE}, recibido {size}")
    if not 2 <= num_classes <= len(GLYPHS):
        raise InvalidArgumentError(
            f"num_classes={num_classes} fuera de [2, {len(GLYPHS)}] (glifos disponibles: {GLYPH_NAMES})"
        )
    if n < 1:
        raise InvalidArgumentError(f"n debe ser >= 1, recibido {n}")
    rng = as_generator(rng)
    group = Group.for_dim(dim)
    labels = rng.integers(0, num_classes, size=n)
    images = np.zeros((n,) + (size,) * dim)
    for i, label in enumerate(labels):
        if rotate:
            rotation = haar_random_rotation(group, rng).rotation_matrix()
            shift = rng.uniform(-0.5, 0.5, size=dim)
        else:
            rotation, shift = np.eye(dim), np.zeros(dim)
        images[i] = render_glyph(GLYPH_NAMES[int(label)], size, rotation, shift)
    logger.debug(f"[DATA] {n} glifos {size}^{dim} renderizados ({num_classes} clases)")
    return images, labels


def lift_images(images: np.ndarray, labels: np.ndarray, cutoff: int, num_classes: int,
                value_range: Optional[tuple[float, float]] = None) -> Batch:
    fields = [lift_scalar_image(img, cutoff, value_range=value_range) for img in images]
    return Batch.from_fields(fields, labels, num_classes)


def make_synthetic_rotated_shapes(n: int, size: int, num_classes: int, rng=None, cutoff: int = 2,
                                  dim: int = 2, value_range: Optional[tuple[float, float]] = None) -> Batch:
    """Glifos con orientacion Haar y desplazamiento sub-pixel, elevados a la irrep trivial."""
    images, labels = render_rotated_shapes(n, size, num_classes, rng, dim=dim)
    return lift_images(images, labels, cutoff, num_classes, value_range)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"No existe el archivo IDX: {path}")
    try:
        with _open(path, "rb") as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise DatasetError(f"No se pudo leer {path}: {e}") from e


def _parse_idx(raw: bytes, path: Path, expected_magic: Optional[set[int]] = None) -> np.ndarray:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: cabecera incompleta ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    ndim = magic & 0xFF
    if magic >> 8 != IDX_UBYTE or ndim < 1 or (expected_magic is not None and magic not in expected_magic):
        wanted = ", ".join(f"0x{m:08x}" for m in sorted(expected_magic or []))
        raise IdxMagicError(f"{path}: magic 0x{magic:08x} inesperado (esperado {wanted or 'u8 IDX'})")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: cabecera de {header} bytes, el archivo tiene {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < count:
        raise IdxTruncatedError(f"{path}: payload de {len(payload)} bytes, se esperaban {count}")
    return np.frombuffer(payload[:count], dtype=np.uint8).reshape(dims)


def read_idx_arrays(images_path: Union[str, Path], labels_path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray]:
    """Imagenes en [0, 1] (float64) y etiquetas (int64), con cantidades verificadas."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _parse_idx(_read_bytes(images_path), images_path, {0x00000803, 0x00000804})
    labels = _parse_idx(_read_bytes(labels_path), labels_path, {IDX_LABEL_MAGIC})
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} declara {images.shape[0]} imagenes y {labels_path} {labels.shape[0]} etiquetas"
        )
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path], cutoff: int = 2,
             num_classes: Optional[int] = None, value_range: Optional[tuple[float, float]] = None) -> Batch:
    """Lee un par IDX y eleva cada imagen a un campo de la irrep trivial."""
    images, labels = read_idx_arrays(images_path, labels_path)
    classes = num_classes if num_classes is not None else int(labels.max(initial=0)) + 1
    logger.info(f"[DATA] IDX cargado: {images.shape[0]} muestras {images.shape[1:]} de {images_path}")
    return lift_images(images, labels, cutoff, max(classes, 2), value_range)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: Union[str, Path],
              labels_path: Union[str, Path]) -> tuple[Path, Path]:
    """Escribe imagenes en [0, 1] (cuantizadas a u8) y etiquetas en formato IDX."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim not in (3, 4) or images.shape[0] != labels.shape[0]:
        raise InvalidArgumentError(f"Formas incompatibles: imagenes {images.shape}, etiquetas {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise InvalidArgumentError("Las etiquetas IDX deben caber en u8")
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    out = []
    for path, array in ((Path(images_path), pixels), (Path(labels_path), labels.astype(np.uint8))):
        path.parent.mkdir(parents=True, exist_ok=True)
        magic = (IDX_UBYTE << 8) | array.ndim
        with _open(path, "wb") as f:
            f.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
            f.write(array.tobytes())
        out.append(path)
    logger.info(f"[DATA] IDX escrito: {out[0]} ({images.shape[0]} muestras)")
    return out[0], out[1]
