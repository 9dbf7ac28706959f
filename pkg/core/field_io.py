"""
core/field_io.py -- Serializacion binaria de campos (formato STFL).

Formato (little-endian):
    magic      4s   b"STFL"
    version    u16
    dim        u8
    layout     u8   0 = rejilla, 1 = nube de puntos
    cutoff     u16
    channels   u32
    rejilla:   dim x u32 (forma) + dim x f64 (origen)
    puntos:    u32 (N) + N*dim x f64 (coordenadas)
    payload:   f64 intercalado (re, im) por bloque de irrep en orden ascendente,
               cada bloque en orden C [N, d_rho, C]

La ida y vuelta write_field -> read_field es exacta bit a bit.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np
from loguru import logger

from core.errors import MagicMismatchError, TruncatedPayloadError, VersionMismatchError, FieldFormatError
from core.field import FourierField, SiteLayout
from core.group_math import irrep_dim, irrep_indices

FIELD_MAGIC = b"STFL"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sHBBHI")
_LAYOUT_TAGS = {"grid": 0, "points": 1}


def encode_field(field_: FourierField) -> bytes:
    """Serializa un campo a bytes STFL."""
    layout = field_.layout
    parts = [_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, layout.dim, _LAYOUT_TAGS[layout.kind],
                          field_.cutoff, field_.channels)]
    if layout.is_grid:
        parts.append(struct.pack(f"<{layout.dim}I", *layout.shape))
        parts.append(struct.pack(f"<{layout.dim}d", *layout.origin))
    else:
        parts.append(struct.pack("<I", layout.num_sites))
        parts.append(np.ascontiguousarray(layout.points, dtype="<f8").tobytes())
    for k in field_.irreps:
        parts.append(np.ascontiguousarray(field_.data[k], dtype="<c16").tobytes())
    return b"".join(parts)


class _Reader:
    """Cursor sobre un buffer que reporta truncamientos con el campo culpable."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, size: int, field_name: str) -> bytes:
        remaining = len(self.buf) - self.pos
        if remaining < size:
            raise TruncatedPayloadError(
                f"STFL truncado en '{field_name}': se esperaban {size} bytes, quedan {remaining}",
                field_name, expected=size, actual=remaining,
            )
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk


def decode_field(buf: bytes) -> FourierField:
    """Interpreta bytes STFL; errores distintos para magic, version y truncamiento."""
    reader = _Reader(buf)
    if len(buf) >= 4 and buf[:4] != FIELD_MAGIC:
        raise MagicMismatchError(
            f"Magic STFL invalido: {buf[:4]!r}", "magic", expected=FIELD_MAGIC, actual=buf[:4]
        )
    magic, version, dim, tag, cutoff, channels = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if version != FIELD_VERSION:
        raise VersionMismatchError(
            f"Version STFL {version} no soportada (se esperaba {FIELD_VERSION})",
            "version", expected=FIELD_VERSION, actual=version,
        )
    if dim not in (2, 3):
        raise FieldFormatError(f"Dimension STFL invalida: {dim}", "dim", expected="2|3", actual=dim)
    if tag == _LAYOUT_TAGS["grid"]:
        shape = struct.unpack(f"<{dim}I", reader.take(4 * dim, "shape"))
        origin = struct.unpack(f"<{dim}d", reader.take(8 * dim, "origin"))
        layout = SiteLayout.grid(shape, origin)
    elif tag == _LAYOUT_TAGS["points"]:
        (count,) = struct.unpack("<I", reader.take(4, "site_count"))
        coords = np.frombuffer(reader.take(8 * dim * count, "coords"), dtype="<f8")
        layout = SiteLayout.point_set(coords.reshape(count, dim).astype(np.float64))
    else:
        raise FieldFormatError(f"Etiqueta de sitios invalida: {tag}", "layout", expected="0|1", actual=tag)

    n = layout.num_sites
    sizes = {k: n * irrep_dim(dim, k) * channels for k in irrep_indices(dim, cutoff)}
    expected = 16 * sum(sizes.values())
    remaining = len(buf) - reader.pos
    if remaining != expected:
        if remaining < expected:
            raise TruncatedPayloadError(
                f"Payload STFL truncado: se esperaban {expected} bytes, encontrados {remaining}",
                "payload", expected=expected, actual=remaining,
            )
        raise FieldFormatError(
            f"Payload STFL con {remaining - expected} bytes sobrantes",
            "payload", expected=expected, actual=remaining,
        )
    data = {}
    for k, size in sizes.items():
        raw = np.frombuffer(reader.take(16 * size, "payload"), dtype="<c16")
        data[k] = raw.astype(np.complex128).reshape(n, irrep_dim(dim, k), channels)
    return FourierField(layout, cutoff, channels, data)


def write_field(field_: FourierField, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_field(field_)
    path.write_bytes(payload)
    logger.debug(f"[FIELD] Campo escrito: {path} ({len(payload)} bytes)")
    return path


def read_field(path: Union[str, Path]) -> FourierField:
    path = Path(path)
    field_ = decode_field(path.read_bytes())
    logger.debug(f"[FIELD] Campo leido: {path} ({field_.layout.describe()}, cutoff={field_.cutoff})")
    return field_
