"""
core/field.py -- Modelo de datos de campos steerables.

Un campo asigna a cada sitio x_i de una rejilla o nube de puntos una matriz
compleja [d_rho x C] por cada irrep en alcance. Existen dos contenedores:

  - FourierField: un solo campo, bloques [N, d_rho, C].
  - FieldBatch:   un lote de campos con la misma geometria, bloques [B, N, d_rho, C].

Las operaciones de este modulo (act_group, norm_per_irrep) aceptan ambos, ya que
el eje de sitios es siempre el antepenultimo. Los campos son inmutables: toda
operacion devuelve un objeto nuevo y nunca reordena sitios.
"""
from dataclasses import dataclass, field as dc_field
from itertools import product
from typing import Iterable, Optional, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError
from core.group_math import (
    GroupElement,
    Group,
    irrep_dim,
    irrep_indices,
    irrep_matrices,
    se_apply,
)

LAYOUT_GRID = "grid"
LAYOUT_POINTS = "points"
INTERP_EXACT = "exact-permutation"
INTERP_LINEAR = "linear"
INTEGRALITY_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Geometria de sitios
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SiteLayout:
    """
    Geometria de los sitios de un campo.

    Atributos:
        kind: "grid" o "points".
        dim: 2 o 3.
        shape: Dimensiones de la rejilla (solo grid).
        origin: Coordenada del sitio de indice 0 (solo grid, espaciado 1).
        points: Coordenadas explicitas [N, dim] (solo points).
    """
    kind: str
    dim: int
    shape: tuple[int, ...] = ()
    origin: tuple[float, ...] = ()
    points: Optional[np.ndarray] = None

    def __post_init__(self):
        Group.for_dim(self.dim)
        if self.kind == LAYOUT_GRID:
            if len(self.shape) != self.dim or any(s < 1 for s in self.shape):
                raise InvalidArgumentError(f"Rejilla invalida {self.shape} para dim={self.dim}")
            if len(self.origin) != self.dim:
                raise InvalidArgumentError(f"Origen de dimension {len(self.origin)} para dim={self.dim}")
        elif self.kind == LAYOUT_POINTS:
            pts = np.asarray(self.points, dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != self.dim:
                raise InvalidArgumentError(f"Coordenadas con forma {pts.shape}, se esperaba [N, {self.dim}]")
            if not np.all(np.isfinite(pts)):
                raise InvalidArgumentError("Coordenadas no finitas")
            pts = pts.copy()
            pts.flags.writeable = False
            object.__setattr__(self, "points", pts)
        else:
            raise InvalidArgumentError(f"Tipo de sitios desconocido: {self.kind!r}")

    @classmethod
    def grid(cls, shape: Iterable[int], origin: Optional[Iterable[float]] = None) -> "SiteLayout":
        """Rejilla centrada por defecto: origin = -(shape - 1) / 2."""
        shape = tuple(int(s) for s in shape)
        if origin is None:
            origin = tuple(-(s - 1) / 2.0 for s in shape)
        return cls(LAYOUT_GRID, len(shape), shape, tuple(float(o) for o in origin))

    @classmethod
    def point_set(cls, coords: np.ndarray) -> "SiteLayout":
        pts = np.asarray(coords, dtype=np.float64)
        if pts.ndim != 2:
            raise InvalidArgumentError(f"Coordenadas con forma {pts.shape}, se esperaba [N, d]")
        return cls(LAYOUT_POINTS, pts.shape[1], points=pts)

    @property
    def is_grid(self) -> bool:
        return self.kind == LAYOUT_GRID

    @property
    def num_sites(self) -> int:
        if self.is_grid:
            return int(np.prod(self.shape))
        return int(self.points.shape[0])

    def coordinates(self) -> np.ndarray:
        """Coordenadas [N, dim] en orden fila-mayor (grid) o de insercion (points)."""
        if not self.is_grid:
            return self.points
        axes = [o + np.arange(s, dtype=np.float64) for s, o in zip(self.shape, self.origin)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def with_points(self, coords: np.ndarray) -> "SiteLayout":
        return SiteLayout.point_set(coords)

    def same_as(self, other: "SiteLayout") -> bool:
        if self.kind != other.kind or self.dim != other.dim:
            return False
        if self.is_grid:
            return self.shape == other.shape and self.origin == other.origin
        return self.points.shape == other.points.shape and np.array_equal(self.points, other.points)

    def describe(self) -> str:
        if self.is_grid:
            return f"grid{self.shape}"
        return f"points[{self.num_sites}]"


# ---------------------------------------------------------------------------
# Contenedores
# ---------------------------------------------------------------------------

def _check_blocks(data: dict, dim: int, cutoff: int, channels: int, lead: tuple[int, ...]):
    expected = irrep_indices(dim, cutoff)
    if sorted(data.keys()) != expected:
        raise InvalidArgumentError(
            f"Irreps del campo {sorted(data.keys())} no coinciden con las esperadas {expected}"
        )
    for idx in expected:
        shape = lead + (irrep_dim(dim, idx), channels)
        if data[idx].shape != shape:
            raise InvalidArgumentError(
                f"Bloque de la irrep {idx} con forma {data[idx].shape}, se esperaba {shape}"
            )


@dataclass(frozen=True, eq=False)
class FourierField:
    """
    Campo steerable sobre una rejilla o una nube de puntos.

    Atributos:
        layout: Geometria de los sitios.
        cutoff: K (SO2) o L (SO3).
        channels: Numero de canales C.
        data: {indice de irrep: arreglo complejo [N, d_rho, C]}.
    """
    layout: SiteLayout
    cutoff: int
    channels: int
    data: dict[int, np.ndarray] = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.cutoff < 0 or self.channels < 1:
            raise InvalidArgumentError(f"cutoff={self.cutoff}, channels={self.channels} invalidos")
        blocks = {int(k): np.asarray(v, dtype=np.complex128) for k, v in self.data.items()}
        _check_blocks(blocks, self.dim, self.cutoff, self.channels, (self.layout.num_sites,))
        object.__setattr__(self, "data", blocks)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def num_sites(self) -> int:
        return self.layout.num_sites

    @property
    def irreps(self) -> list[int]:
        return irrep_indices(self.dim, self.cutoff)

    def block(self, index: int) -> np.ndarray:
        return self.data[index]

    def coordinates(self) -> np.ndarray:
        return self.layout.coordinates()

    def with_data(self, data: dict[int, np.ndarray], layout: Optional[SiteLayout] = None,
                  channels: Optional[int] = None) -> "FourierField":
        return FourierField(layout or self.layout, self.cutoff,
                            channels if channels is not None else self.channels, data)

    @classmethod
    def zeros(cls, layout: SiteLayout, cutoff: int, channels: int) -> "FourierField":
        data = {
            k: np.zeros((layout.num_sites, irrep_dim(layout.dim, k), channels), dtype=np.complex128)
            for k in irrep_indices(layout.dim, cutoff)
        }
        return cls(layout, cutoff, channels, data)

    @classmethod
    def random(cls, layout: SiteLayout, cutoff: int, channels: int,
               rng: np.random.Generator) -> "FourierField":
        """Campo con partes real e imaginaria normales estandar (para pruebas y auditorias)."""
        data = {}
        for k in irrep_indices(layout.dim, cutoff):
            shape = (layout.num_sites, irrep_dim(layout.dim, k), channels)
            data[k] = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        return cls(layout, cutoff, channels, data)


@dataclass(frozen=True, eq=False)
class FieldBatch:
    """
    Lote de campos con geometria, cutoff y canales comunes.

    Atributos:
        layout: Geometria compartida.
        cutoff: K o L.
        channels: C.
        data: {indice de irrep: arreglo complejo [B, N, d_rho, C]}.
    """
    layout: SiteLayout
    cutoff: int
    channels: int
    data: dict[int, np.ndarray] = dc_field(default_factory=dict)

    def __post_init__(self):
        blocks = {int(k): np.asarray(v, dtype=np.complex128) for k, v in self.data.items()}
        if not blocks:
            raise InvalidArgumentError("Lote sin bloques")
        batch = next(iter(blocks.values())).shape[0]
        _check_blocks(blocks, self.dim, self.cutoff, self.channels, (batch, self.layout.num_sites))
        object.__setattr__(self, "data", blocks)

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def batch_size(self) -> int:
        return next(iter(self.data.values())).shape[0]

    @property
    def num_sites(self) -> int:
        return self.layout.num_sites

    @property
    def irreps(self) -> list[int]:
        return irrep_indices(self.dim, self.cutoff)

    def block(self, index: int) -> np.ndarray:
        return self.data[index]

    def with_data(self, data: dict[int, np.ndarray], layout: Optional[SiteLayout] = None,
                  channels: Optional[int] = None) -> "FieldBatch":
        return FieldBatch(layout or self.layout, self.cutoff,
                          channels if channels is not None else self.channels, data)

    def field(self, i: int) -> FourierField:
        return FourierField(self.layout, self.cutoff, self.channels,
                            {k: v[i] for k, v in self.data.items()})

    def fields(self) -> list[FourierField]:
        return [self.field(i) for i in range(self.batch_size)]

    def subset(self, indices: np.ndarray) -> "FieldBatch":
        return self.with_data({k: v[indices] for k, v in self.data.items()})

    @classmethod
    def from_fields(cls, fields: list[FourierField]) -> "FieldBatch":
        if not fields:
            raise InvalidArgumentError("No se puede construir un lote vacio")
        first = fields[0]
        for f in fields[1:]:
            if not f.layout.same_as(first.layout) or f.cutoff != first.cutoff or f.channels != first.channels:
                raise InvalidArgumentError("Todos los campos de un lote deben compartir geometria, cutoff y canales")
        data = {k: np.stack([f.data[k] for f in fields]) for k in first.irreps}
        return cls(first.layout, first.cutoff, first.channels, data)

    @classmethod
    def zeros(cls, layout: SiteLayout, cutoff: int, channels: int, batch_size: int) -> "FieldBatch":
        data = {
            k: np.zeros((batch_size, layout.num_sites, irrep_dim(layout.dim, k), channels),
                        dtype=np.complex128)
            for k in irrep_indices(layout.dim, cutoff)
        }
        return cls(layout, cutoff, channels, data)

    @classmethod
    def random(cls, layout: SiteLayout, cutoff: int, channels: int, batch_size: int,
               rng: np.random.Generator) -> "FieldBatch":
        data = {}
        for k in irrep_indices(layout.dim, cutoff):
            shape = (batch_size, layout.num_sites, irrep_dim(layout.dim, k), channels)
            data[k] = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        return cls(layout, cutoff, channels, data)


AnyField = Union[FourierField, FieldBatch]


# ---------------------------------------------------------------------------
# Utilidades de bloques
# ---------------------------------------------------------------------------

def to_spatial(block: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """[B, N, d, C] -> [B, *shape, d, C]."""
    return block.reshape(block.shape[:1] + tuple(shape) + block.shape[-2:])


def from_spatial(block: np.ndarray, dim: int) -> np.ndarray:
    """[B, *shape, d, C] -> [B, N, d, C]."""
    return block.reshape(block.shape[:1] + (-1,) + block.shape[1 + dim:])


def field_norm(field_: AnyField) -> float:
    """Norma de Frobenius total sobre todos los bloques."""
    return float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in field_.data.values())))


def norm_per_irrep(field_: AnyField) -> np.ndarray:
    """
    Norma euclidea de cada columna d_rho.

    Retorna [..., N, num_irreps, C] con las irreps en orden ascendente.
    """
    norms = [np.sqrt(np.sum(np.abs(field_.data[k]) ** 2, axis=-2)) for k in field_.irreps]
    return np.stack(norms, axis=-2)


def lift_scalar_image(image: np.ndarray, cutoff: int, channels: int = 1,
                      value_range: Optional[tuple[float, float]] = None) -> FourierField:
    """
    Coloca una imagen real en la irrep trivial de una rejilla centrada.

    Args:
        image: [H, W] o [H, W, D] (channels == 1), o con un eje final de canales.
        cutoff: Cutoff del campo resultante.
        channels: Canales del campo.
        value_range: Si se indica, reescala linealmente [0, 1] -> [lo, hi].
    """
    img = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise InvalidArgumentError("La imagen contiene valores no finitos")
    if channels == 1 and img.ndim in (2, 3):
        spatial = img.shape
        values = img.reshape(-1, 1)
    elif channels > 1 and img.ndim in (3, 4) and img.shape[-1] == channels:
        spatial = img.shape[:-1]
        values = img.reshape(-1, channels)
    else:
        raise InvalidArgumentError(f"Imagen con forma {img.shape} incompatible con channels={channels}")
    if value_range is not None:
        lo, hi = value_range
        values = lo + (hi - lo) * values
    layout = SiteLayout.grid(spatial)
    out = FourierField.zeros(layout, cutoff, channels)
    blocks = dict(out.data)
    blocks[0] = values[:, None, :].astype(np.complex128)
    return out.with_data(blocks)


# ---------------------------------------------------------------------------
# Accion del grupo
# ---------------------------------------------------------------------------

def _apply_irreps(data: dict[int, np.ndarray], dim: int, cutoff: int, g: GroupElement) -> dict[int, np.ndarray]:
    mats = irrep_matrices(dim, cutoff, g.rotation_only())
    return {k: np.einsum("ab,...nbc->...nac", mats[k], v) for k, v in data.items()}


def _is_signed_permutation(r: np.ndarray) -> bool:
    rounded = np.rint(r)
    return bool(np.max(np.abs(r - rounded)) <= INTEGRALITY_TOLERANCE and
                np.all(np.sum(np.abs(rounded), axis=0) == 1))


def _source_indices(layout: SiteLayout, g: GroupElement) -> np.ndarray:
    """Indice fraccionario de R^-1 (x - t) para cada sitio x de la rejilla."""
    coords = layout.coordinates()
    src = (coords - g.translation_vector()) @ g.rotation_matrix()
    return src - np.asarray(layout.origin)


def _gather_exact(data: dict[int, np.ndarray], layout: SiteLayout, g: GroupElement) -> dict[int, np.ndarray]:
    if not _is_signed_permutation(g.rotation_matrix()):
        raise InvalidArgumentError(
            f"El modo {INTERP_EXACT} requiere una rotacion de rejilla; angulos={g.angles}"
        )
    u = _source_indices(layout, g)
    idx = np.rint(u)
    if np.max(np.abs(u - idx), initial=0.0) > INTEGRALITY_TOLERANCE:
        raise InvalidArgumentError(
            f"El modo {INTERP_EXACT} requiere traslaciones enteras; t={g.translation}"
        )
    idx = idx.astype(np.int64)
    shape = np.asarray(layout.shape)
    valid = np.all((idx >= 0) & (idx < shape), axis=1)
    flat = np.ravel_multi_index(tuple(idx[valid].T), layout.shape)
    out = {}
    for k, v in data.items():
        res = np.zeros_like(v)
        res[..., valid, :, :] = v[..., flat, :, :]
        out[k] = res
    return out


def _gather_linear(data: dict[int, np.ndarray], layout: SiteLayout, g: GroupElement) -> dict[int, np.ndarray]:
    u = _source_indices(layout, g)
    base = np.floor(u)
    frac = u - base
    base = base.astype(np.int64)
    shape = np.asarray(layout.shape)
    out = {k: np.zeros_like(v) for k, v in data.items()}
    for corner in product((0, 1), repeat=layout.dim):
        c = np.asarray(corner)
        idx = base + c
        weight = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        valid = np.all((idx >= 0) & (idx < shape), axis=1) & (weight != 0.0)
        if not np.any(valid):
            continue
        flat = np.ravel_multi_index(tuple(idx[valid].T), layout.shape)
        w = weight[valid][:, None, None]
        for k, v in data.items():
            out[k][..., valid, :, :] += w * v[..., flat, :, :]
    return out


def act_group(field_: AnyField, g: GroupElement, interpolation: str = INTERP_LINEAR) -> AnyField:
    """
    Accion izquierda de SE(d): f'(x) = rho(R) f(R^-1 (x - t)).

    Nubes de puntos: los sitios se mueven con se_apply y cada bloque se multiplica
    por rho(R); es exacto. Rejillas: los valores se remuestrean sobre la rejilla fija
    (permutacion exacta o interpolacion multilineal, con ceros fuera del dominio)
    y despues se aplica rho(R).
    """
    if g.dim != field_.dim:
        raise InvalidArgumentError(f"Elemento de SE({g.dim}) aplicado a un campo de dimension {field_.dim}")
    if interpolation not in (INTERP_EXACT, INTERP_LINEAR):
        raise InvalidArgumentError(f"Interpolacion desconocida: {interpolation!r}")
    if g.is_identity:
        return field_.with_data({k: v.copy() for k, v in field_.data.items()})

    layout = field_.layout
    if not layout.is_grid:
        if interpolation == INTERP_EXACT:
            raise InvalidArgumentError(f"El modo {INTERP_EXACT} requiere un campo en rejilla")
        moved = layout.with_points(se_apply(g, layout.points))
        return field_.with_data(_apply_irreps(field_.data, field_.dim, field_.cutoff, g), layout=moved)

    if interpolation == INTERP_EXACT:
        resampled = _gather_exact(field_.data, layout, g)
    else:
        resampled = _gather_linear(field_.data, layout, g)
    logger.debug(f"[FIELD] act_group {interpolation} sobre {layout.describe()}")
    return field_.with_data(_apply_irreps(resampled, field_.dim, field_.cutoff, g))
