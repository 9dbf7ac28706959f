"""
layers/conv.py -- Convoluciones steerables en espacio de Fourier, pooling y batch norm.

La integral sobre SO(d) de la convolucion de grupo nunca se materializa: los
coeficientes de Fourier se acoplan por suma de frecuencias (2D) o por
contraccion de Clebsch-Gordan (3D). Cada acoplamiento (irrep de entrada, orden
del kernel, irrep de salida) tiene r estenciles radiales fijos; los pesos
aprendibles combinan estenciles y canales.

Convenciones:
  - Correlacion "valid": out(x) = sum_y K(y) f(x + y); cada eje pierde k - 1 sitios
    y la rejilla de salida queda centrada.
  - Estencil 2D de orden m: promedio de g_j(|p|) e^{-im theta(p)} sobre un circulo
    de radio 1/2 alrededor de cada offset, con un numero de nodos multiplo de 4
    para que los cuartos de vuelta sean exactos.
  - Estencil 3D (l_in, J, l_out): sum_mJ CG[m_in, mJ, M] g_j(|y|) Y^J_mJ(y/|y|).
  - Cada estencil se normaliza a norma de Frobenius 1.
"""
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import InvalidArgumentError, ShapeChainError
from core.field import FieldBatch, FourierField, SiteLayout, from_spatial, to_spatial
from core.group_math import clebsch_gordan, irrep_dim, irrep_indices, spherical_harmonics_batch
from layers.registry import LAYERS, FieldSpec, ForwardContext, Layer, complex_init, check_finite

KERNEL_FULL = "full"


# ---------------------------------------------------------------------------
# Base de kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coupling:
    """Acoplamiento irrep_in -> irrep_out a traves del orden angular del kernel."""
    irrep_in: int
    order: int
    irrep_out: int


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """
    Base fija de estenciles steerables.

    Atributos:
        dim, kernel_size, radial_resolution, angular_resolution, cutoff: Hiperparametros.
        couplings: Acoplamientos ordenados por (irrep_in, irrep_out, orden).
        stencils: Por acoplamiento, arreglo complejo [r, P, d_out, d_in], P = k^dim.
        offsets: Offsets enteros [P, dim] en orden fila-mayor.
        centers: Centros de los anillos gaussianos.
        sigma: Ancho comun de los anillos.
    """
    dim: int
    kernel_size: int
    radial_resolution: int
    angular_resolution: int
    cutoff: int
    couplings: tuple[Coupling, ...]
    stencils: tuple[np.ndarray, ...]
    offsets: np.ndarray
    centers: np.ndarray
    sigma: float

    @property
    def num_offsets(self) -> int:
        return self.offsets.shape[0]

    def lift_indices(self) -> list[int]:
        """Acoplamientos con entrada trivial (capa de tipo 1)."""
        return [i for i, c in enumerate(self.couplings) if c.irrep_in == 0]

    def all_indices(self) -> list[int]:
        return list(range(len(self.couplings)))

    def stencil_grid(self, coupling: int, ring: int) -> np.ndarray:
        """Estencil como arreglo espacial [k, ..., k, d_out, d_in]."""
        st = self.stencils[coupling][ring]
        return st.reshape((self.kernel_size,) * self.dim + st.shape[1:])


def _couplings(dim: int, cutoff: int) -> list[Coupling]:
    out = []
    irreps = irrep_indices(dim, cutoff)
    for k_in in irreps:
        for k_out in irreps:
            if dim == 2:
                m = k_out - k_in
                if abs(m) <= cutoff:
                    out.append(Coupling(k_in, m, k_out))
            else:
                for j in range(abs(k_in - k_out), min(k_in + k_out, cutoff) + 1):
                    out.append(Coupling(k_in, j, k_out))
    return out


def _radial_profile(rho: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    """g_j(rho) para todos los anillos: [r, *rho.shape]."""
    diff = rho[None, ...] - centers.reshape((-1,) + (1,) * rho.ndim)
    return np.exp(-diff ** 2 / (2.0 * sigma ** 2))


def _stencils_2d(offsets, couplings, centers, sigma, angular_resolution) -> list[np.ndarray]:
    nodes = 4 * math.ceil(angular_resolution / 4)
    psi = 2.0 * np.pi * np.arange(nodes) / nodes
    ring = 0.5 * np.stack([np.cos(psi), np.sin(psi)], axis=-1)
    pts = offsets[:, None, :] + ring[None, :, :]
    rho = np.linalg.norm(pts, axis=-1)
    theta = np.arctan2(pts[..., 1], pts[..., 0])
    radial = _radial_profile(rho, centers, sigma)
    by_order = {}
    out = []
    for c in couplings:
        if c.order not in by_order:
            phase = np.exp(-1j * c.order * theta)
            by_order[c.order] = np.mean(radial * phase[None], axis=-1)
        out.append(by_order[c.order][:, :, None, None])
    return out


def _stencils_3d(offsets, couplings, centers, sigma) -> list[np.ndarray]:
    rho = np.linalg.norm(offsets, axis=-1)
    radial = _radial_profile(rho, centers, sigma)
    harmonics = {}
    out = []
    for c in couplings:
        if c.order not in harmonics:
            y = spherical_harmonics_batch(c.order, offsets)
            if c.order == 0:
                y = np.where(rho[:, None] == 0.0, 1.0 / math.sqrt(4.0 * math.pi), y)
            harmonics[c.order] = y
        cg = clebsch_gordan(c.irrep_in, c.order, c.irrep_out)
        gy = radial[:, :, None] * harmonics[c.order][None, :, :]
        out.append(np.einsum("imM,rpm->rpMi", cg, gy))
    return out


def build_kernel_basis(dim: int, kernel_size: int, radial_resolution: int,
                       angular_resolution: int, cutoff: int) -> KernelBasis:
    """
    Construye la base de estenciles.

    Errores:
        InvalidArgumentError: kernel par, r < 1, A <= 2 cutoff o dimension no soportada.
    """
    if dim not in (2, 3):
        raise InvalidArgumentError(f"Dimension no soportada: {dim}")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgumentError(f"kernel_size debe ser impar y positivo: {kernel_size}")
    if radial_resolution < 1:
        raise InvalidArgumentError(f"radial_resolution debe ser >= 1: {radial_resolution}")
    if cutoff < 0:
        raise InvalidArgumentError(f"cutoff negativo: {cutoff}")
    if angular_resolution <= 2 * cutoff:
        raise InvalidArgumentError(
            f"angular_resolution={angular_resolution} debe superar 2*cutoff={2 * cutoff}"
        )

    half = (kernel_size - 1) // 2
    axis = np.arange(-half, half + 1, dtype=np.float64)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    offsets = np.stack([m.ravel() for m in mesh], axis=-1)

    r = radial_resolution
    centers = np.linspace(0.0, kernel_size / 2.0, r) if r > 1 else np.zeros(1)
    sigma = float(centers[1] - centers[0]) if r > 1 else kernel_size / 4.0

    couplings = _couplings(dim, cutoff)
    if dim == 2:
        raw = _stencils_2d(offsets, couplings, centers, sigma, angular_resolution)
    else:
        raw = _stencils_3d(offsets, couplings, centers, sigma)

    stencils = []
    for st in raw:
        norms = np.sqrt(np.sum(np.abs(st) ** 2, axis=(1, 2, 3), keepdims=True))
        st = np.where(norms > 1e-12, st / np.where(norms > 1e-12, norms, 1.0), 0.0)
        st.flags.writeable = False
        stencils.append(st)
    offsets.flags.writeable = False

    logger.debug(
        f"[CONV] Base construida: dim={dim}, k={kernel_size}, r={r}, A={angular_resolution}, "
        f"cutoff={cutoff}, {len(couplings)} acoplamientos"
    )
    return KernelBasis(dim, kernel_size, r, angular_resolution, cutoff,
                       tuple(couplings), tuple(stencils), offsets, centers, sigma)


# ---------------------------------------------------------------------------
# Nucleo de la convolucion (lotes)
# ---------------------------------------------------------------------------

def extract_patches(block: np.ndarray, kernel_size: int, dim: int) -> np.ndarray:
    """[B, *S, d, C] -> [B, N_out, P, d, C]."""
    axes = tuple(range(1, 1 + dim))
    win = sliding_window_view(block, (kernel_size,) * dim, axis=axes)
    win = np.moveaxis(win, tuple(range(-dim, 0)), tuple(range(1 + dim, 1 + 2 * dim)))
    b = block.shape[0]
    return win.reshape((b, -1, kernel_size ** dim) + block.shape[-2:])


def fold_patches(grad: np.ndarray, in_shape: tuple[int, ...], out_shape: tuple[int, ...],
                 kernel_size: int, dim: int) -> np.ndarray:
    """Adjunto de extract_patches: [B, N_out, P, d, C] -> [B, *S, d, C]."""
    b = grad.shape[0]
    tail = grad.shape[-2:]
    grad = grad.reshape((b,) + tuple(out_shape) + (kernel_size,) * dim + tail)
    out = np.zeros((b,) + tuple(in_shape) + tail, dtype=grad.dtype)
    lead = (slice(None),) * (1 + dim)
    for off in np.ndindex(*((kernel_size,) * dim)):
        window = tuple(slice(o, o + so) for o, so in zip(off, out_shape))
        out[(slice(None),) + window] += grad[lead + off]
    return out


def _plan(basis: KernelBasis, coupling_ids: list[int]) -> dict[int, list[tuple[int, int]]]:
    """{irrep_out: [(posicion en el eje de pesos, indice de acoplamiento)]}."""
    plan = {k: [] for k in irrep_indices(basis.dim, basis.cutoff)}
    for g, c in enumerate(coupling_ids):
        plan[basis.couplings[c].irrep_out].append((g, c))
    return plan


def conv_forward(blocks: dict[int, np.ndarray], in_shape: tuple[int, ...], basis: KernelBasis,
                 coupling_ids: list[int], weights: np.ndarray) -> tuple[dict[int, np.ndarray], dict]:
    """
    Convolucion steerable sobre bloques [B, N, d, C_in].

    Retorna bloques de salida [B, N_out, d, C_out] y el cache del adjunto.
    """
    k, dim = basis.kernel_size, basis.dim
    out_shape = tuple(s - k + 1 for s in in_shape)
    if any(s < 1 for s in out_shape):
        raise InvalidArgumentError(f"Rejilla {in_shape} menor que el kernel {k}")
    b = next(iter(blocks.values())).shape[0]
    n_out = int(np.prod(out_shape))
    c_out = weights.shape[0]
    plan = _plan(basis, coupling_ids)
    patches: dict[int, np.ndarray] = {}
    responses: dict[int, np.ndarray] = {}
    out = {}
    for k_out, groups in plan.items():
        if not groups:
            out[k_out] = np.zeros((b, n_out, irrep_dim(dim, k_out), c_out), dtype=np.complex128)
            continue
        rs = []
        for _, c in groups:
            k_in = basis.couplings[c].irrep_in
            if k_in not in patches:
                patches[k_in] = extract_patches(to_spatial(blocks[k_in], in_shape), k, dim)
            rs.append(np.einsum("bnpic,rpMi->bnMcr", patches[k_in], basis.stencils[c], optimize=True))
        stacked = np.stack(rs, axis=-2)
        gidx = [g for g, _ in groups]
        out[k_out] = np.einsum("bnMcgr,ocgr->bnMo", stacked, weights[:, :, gidx, :], optimize=True)
        responses[k_out] = stacked
    cache = {"patches": patches, "responses": responses, "plan": plan,
             "in_shape": tuple(in_shape), "out_shape": out_shape}
    return out, cache


def conv_backward(grad_out: dict[int, np.ndarray], cache: dict, basis: KernelBasis,
                  weights: np.ndarray, input_irreps: list[int]) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Adjunto de conv_forward: gradientes de la entrada y de los pesos."""
    k, dim = basis.kernel_size, basis.dim
    g_w = np.zeros_like(weights)
    g_patch = {k_in: np.zeros_like(p) for k_in, p in cache["patches"].items()}
    for k_out, groups in cache["plan"].items():
        if not groups:
            continue
        gy = grad_out[k_out]
        gidx = [g for g, _ in groups]
        stacked = cache["responses"][k_out]
        g_w[:, :, gidx, :] += np.einsum("bnMcgr,bnMo->ocgr", stacked.conj(), gy, optimize=True)
        g_resp = np.einsum("bnMo,ocgr->bnMcgr", gy, weights[:, :, gidx, :].conj(), optimize=True)
        for local, (_, c) in enumerate(groups):
            k_in = basis.couplings[c].irrep_in
            g_patch[k_in] += np.einsum("bnMcr,rpMi->bnpic", g_resp[..., local, :],
                                       basis.stencils[c].conj(), optimize=True)
    grads = {}
    some = next(iter(cache["patches"].values()))
    b, c_in = some.shape[0], some.shape[-1]
    for k_in in input_irreps:
        if k_in in g_patch:
            full = fold_patches(g_patch[k_in], cache["in_shape"], cache["out_shape"], k, dim)
            grads[k_in] = from_spatial(full, dim)
        else:
            n_in = int(np.prod(cache["in_shape"]))
            grads[k_in] = np.zeros((b, n_in, irrep_dim(dim, k_in), c_in), dtype=np.complex128)
    return grads, g_w


def _as_batch(field_: Union[FourierField, FieldBatch]) -> tuple[FieldBatch, bool]:
    if isinstance(field_, FourierField):
        return FieldBatch(field_.layout, field_.cutoff, field_.channels,
                          {k: v[None] for k, v in field_.data.items()}), True
    return field_, False


def _unbatch(batch: FieldBatch, single: bool):
    return batch.field(0) if single else batch


def _check_weights(weights: np.ndarray, c_in: int, num_couplings: int, basis: KernelBasis):
    expected = (weights.shape[0] if weights.ndim == 4 else -1, c_in, num_couplings, basis.radial_resolution)
    if weights.ndim != 4 or weights.shape[1:] != expected[1:]:
        raise InvalidArgumentError(
            f"Pesos con forma {weights.shape}, se esperaba [C_out, {c_in}, {num_couplings}, {basis.radial_resolution}]"
        )


def _run_conv(field_, basis: KernelBasis, weights: np.ndarray, lift: bool):
    batch, single = _as_batch(field_)
    if not batch.layout.is_grid:
        raise InvalidArgumentError("La convolucion requiere un campo en rejilla")
    if batch.dim != basis.dim or batch.cutoff != basis.cutoff:
        raise InvalidArgumentError(
            f"Campo (dim={batch.dim}, cutoff={batch.cutoff}) incompatible con la base "
            f"(dim={basis.dim}, cutoff={basis.cutoff})"
        )
    ids = basis.lift_indices() if lift else basis.all_indices()
    weights = np.asarray(weights, dtype=np.complex128)
    _check_weights(weights, batch.channels, len(ids), basis)
    out, _ = conv_forward(batch.data, batch.layout.shape, basis, ids, weights)
    shape = tuple(s - basis.kernel_size + 1 for s in batch.layout.shape)
    result = FieldBatch(SiteLayout.grid(shape), batch.cutoff, weights.shape[0], out)
    return _unbatch(result, single)


def conv_type1(field_: Union[FourierField, FieldBatch], basis: KernelBasis, weights: np.ndarray):
    """Primera capa: correlacion de la entrada escalar con los estenciles de entrada trivial."""
    batch, _ = _as_batch(field_)
    for k, block in batch.data.items():
        if k != 0 and np.any(block != 0):
            raise InvalidArgumentError(
                f"conv_type1 recibe contenido en la irrep no trivial {k}; use conv_type2"
            )
    return _run_conv(field_, basis, weights, lift=True)


def conv_type2(field_: Union[FourierField, FieldBatch], basis: KernelBasis, weights: np.ndarray):
    """Capas siguientes: acopla todas las irreps de entrada con todas las de salida."""
    return _run_conv(field_, basis, weights, lift=False)


# ---------------------------------------------------------------------------
# Pooling y batch norm (funcionales)
# ---------------------------------------------------------------------------

def _pool_shape(shape: tuple[int, ...], stride: int) -> tuple[int, ...]:
    if stride < 1:
        raise InvalidArgumentError(f"stride debe ser >= 1: {stride}")
    if any(s % stride for s in shape):
        raise InvalidArgumentError(f"Rejilla {shape} no divisible por stride={stride}")
    return tuple(s // stride for s in shape)


def pool_blocks(blocks: dict[int, np.ndarray], shape: tuple[int, ...], stride: int) -> dict[int, np.ndarray]:
    dim = len(shape)
    out_shape = _pool_shape(shape, stride)
    out = {}
    for k, v in blocks.items():
        split = [v.shape[0]]
        for s in out_shape:
            split += [s, stride]
        sp = v.reshape(tuple(split) + v.shape[-2:])
        pooled = sp.mean(axis=tuple(2 + 2 * i for i in range(dim)))
        out[k] = pooled.reshape((v.shape[0], -1) + v.shape[-2:])
    return out


def unpool_grad(grads: dict[int, np.ndarray], shape: tuple[int, ...], stride: int) -> dict[int, np.ndarray]:
    """Adjunto del promedio: reparte cada gradiente entre stride^d sitios."""
    dim = len(shape)
    out_shape = _pool_shape(shape, stride)
    out = {}
    for k, g in grads.items():
        gs = g.reshape((g.shape[0],) + out_shape + g.shape[-2:]) / stride ** dim
        for axis in range(1, 1 + dim):
            gs = np.repeat(gs, stride, axis=axis)
        out[k] = gs.reshape((g.shape[0], -1) + g.shape[-2:])
    return out


def avg_pool(field_: Union[FourierField, FieldBatch], stride: int):
    """Promedio por bloques s^d, por irrep y canal."""
    batch, single = _as_batch(field_)
    if not batch.layout.is_grid:
        raise InvalidArgumentError("avg_pool requiere un campo en rejilla")
    shape = batch.layout.shape
    out = pool_blocks(batch.data, shape, stride)
    result = batch.with_data(out, layout=SiteLayout.grid(_pool_shape(shape, stride)))
    return _unbatch(result, single)


def mean_square_norms(block: np.ndarray) -> np.ndarray:
    """Media sobre lote y sitios de ||f||^2 por canal: [C]."""
    return np.mean(np.sum(np.abs(block) ** 2, axis=-2), axis=(0, 1))


def steerable_batch_norm(batch: FieldBatch, running_stats: Optional[dict[int, np.ndarray]], train: bool,
                         gain: Optional[dict[int, np.ndarray]] = None, momentum: float = 0.1,
                         eps: float = 1e-5) -> tuple[FieldBatch, dict[int, np.ndarray]]:
    """
    Normaliza cada (irrep, canal) por sqrt(media de ||f||^2 + eps) y multiplica por una ganancia.

    En modo train usa la media del lote y devuelve las estadisticas acumuladas
    actualizadas; en modo eval usa running_stats tal cual.
    """
    if not train and running_stats is None:
        raise InvalidArgumentError("El modo eval requiere estadisticas acumuladas")
    out, new_stats = {}, {}
    for k, v in batch.data.items():
        prev = running_stats[k] if running_stats is not None else np.ones(batch.channels)
        if train:
            ms = mean_square_norms(v)
            new_stats[k] = (1.0 - momentum) * prev + momentum * ms
        else:
            ms = prev
            new_stats[k] = prev
        g = gain[k] if gain is not None else 1.0
        out[k] = v * (g / np.sqrt(ms + eps))
    return batch.with_data(out), new_stats


# ---------------------------------------------------------------------------
# Capas
# ---------------------------------------------------------------------------

def _resolve_kernel(kernel_size, spec: FieldSpec, name: str) -> int:
    if kernel_size == KERNEL_FULL:
        extents = set(spec.shape)
        if len(extents) != 1:
            raise ShapeChainError(f"kernel 'full' requiere rejilla cubica, recibe {spec.shape}", field=name)
        return extents.pop()
    return int(kernel_size)


@LAYERS.register("conv_type2")
class SteerableConv(Layer):
    """
    Convolucion steerable de tipo 2 (todas las irreps de entrada).

    Parametros: <name>.weight complejo [C_out, C_in, acoplamientos, r].
    """
    LIFT = False

    def __init__(self, name: str, out_channels: int, kernel_size=3, radial_resolution: int = 2,
                 angular_resolution: int = 40):
        super().__init__(name)
        self.out_channels = int(out_channels)
        self.kernel_size = kernel_size
        self.radial_resolution = int(radial_resolution)
        self.angular_resolution = int(angular_resolution)
        self.basis: Optional[KernelBasis] = None
        self.coupling_ids: list[int] = []

    def output_spec(self, spec):
        spec = self.require_field(spec)
        if not spec.is_grid:
            raise ShapeChainError(f"{self.LAYER_TYPE} requiere una rejilla", field=self.name)
        k = _resolve_kernel(self.kernel_size, spec, self.name)
        if k % 2 == 0:
            raise ShapeChainError(f"kernel {k} debe ser impar", field=self.name)
        out_shape = tuple(s - k + 1 for s in spec.shape)
        if any(s < 1 for s in out_shape):
            raise ShapeChainError(f"rejilla {spec.shape} menor que el kernel {k}", field=self.name)
        self.basis = build_kernel_basis(spec.dim, k, self.radial_resolution,
                                        self.angular_resolution, spec.cutoff)
        self.coupling_ids = self.basis.lift_indices() if self.LIFT else self.basis.all_indices()
        return spec.replace(channels=self.out_channels, shape=out_shape)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.input_spec.channels, len(self.coupling_ids),
                self.radial_resolution)

    def register(self, store, rng):
        num_out = len(irrep_indices(self.input_spec.dim, self.input_spec.cutoff))
        per_out = max(1, len(self.coupling_ids) // num_out)
        fan_in = self.input_spec.channels * per_out * self.radial_resolution
        store.register(self.key("weight"), self.weight_shape, "complex",
                       complex_init(rng, self.weight_shape, fan_in))

    def forward(self, store, x: FieldBatch, ctx: ForwardContext):
        if self.LIFT:
            for k, block in x.data.items():
                if k != 0 and np.any(block != 0):
                    raise InvalidArgumentError(f"{self.name}: contenido no trivial en la irrep {k}")
        w = store.get(self.key("weight"))
        out, cache = conv_forward(x.data, x.layout.shape, self.basis, self.coupling_ids, w)
        cache["input_irreps"] = x.irreps
        layout = SiteLayout.grid(cache["out_shape"])
        return x.with_data(out, layout=layout, channels=self.out_channels), cache

    def backward(self, store, cache, gy: FieldBatch):
        w = store.get(self.key("weight"))
        grads, g_w = conv_backward(gy.data, cache, self.basis, w, cache["input_irreps"])
        store.accumulate(self.key("weight"), g_w)
        layout = SiteLayout.grid(cache["in_shape"])
        return FieldBatch(layout, gy.cutoff, self.input_spec.channels, grads)


@LAYERS.register("conv_type1")
class SteerableLiftConv(SteerableConv):
    """Convolucion de entrada: solo acoplamientos desde la irrep trivial."""
    LIFT = True


@LAYERS.register("avg_pool")
class AvgPool(Layer):
    """Promedio por bloques con stride fijo."""

    def __init__(self, name: str, stride: int = 2):
        super().__init__(name)
        self.stride = int(stride)

    def output_spec(self, spec):
        spec = self.require_field(spec)
        if not spec.is_grid:
            raise ShapeChainError("avg_pool requiere una rejilla", field=self.name)
        if any(s % self.stride for s in spec.shape):
            raise ShapeChainError(f"rejilla {spec.shape} no divisible por {self.stride}", field=self.name)
        return spec.replace(shape=tuple(s // self.stride for s in spec.shape))

    def forward(self, store, x: FieldBatch, ctx):
        shape = x.layout.shape
        out = pool_blocks(x.data, shape, self.stride)
        return x.with_data(out, layout=SiteLayout.grid(_pool_shape(shape, self.stride))), shape

    def backward(self, store, cache, gy: FieldBatch):
        return gy.with_data(unpool_grad(gy.data, cache, self.stride), layout=SiteLayout.grid(cache))


@LAYERS.register("steerable_batch_norm")
class SteerableBatchNorm(Layer):
    """
    Batch norm steerable sin sesgo.

    Parametros: <name>.log_gain real [R, C] (ganancia = exp, siempre positiva).
    Buffer: <name>.running_ms [R, C], media de ||f||^2 acumulada.
    """

    def __init__(self, name: str, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(name)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def output_spec(self, spec):
        return self.require_field(spec)

    def register(self, store, rng):
        spec = self.input_spec
        shape = (len(irrep_indices(spec.dim, spec.cutoff)), spec.channels)
        store.register(self.key("log_gain"), shape, "real")
        store.register(self.key("running_ms"), shape, "buffer", np.ones(shape))

    def forward(self, store, x: FieldBatch, ctx: ForwardContext):
        log_gain = store.get(self.key("log_gain"))
        running = store.get(self.key("running_ms")).copy()
        out, scales, stats = {}, {}, {}
        for r, k in enumerate(x.irreps):
            v = x.data[k]
            if ctx.train:
                ms = mean_square_norms(v)
                running[r] = (1.0 - self.momentum) * running[r] + self.momentum * ms
            else:
                ms = running[r]
            a = np.exp(log_gain[r]) / np.sqrt(ms + self.eps)
            out[k] = v * a
            scales[k], stats[k] = a, ms
        if ctx.train and ctx.update_stats:
            store.set(self.key("running_ms"), running)
        cache = {"x": x, "scales": scales, "stats": stats, "train": ctx.train}
        return x.with_data(out), cache

    def backward(self, store, cache, gy: FieldBatch):
        x: FieldBatch = cache["x"]
        g_log = np.zeros((len(x.irreps), x.channels))
        grads = {}
        m = x.batch_size * x.num_sites
        for r, k in enumerate(x.irreps):
            v, g, a = x.data[k], gy.data[k], cache["scales"][k]
            ga = np.sum(np.real(np.conj(g) * v), axis=(0, 1, 2))
            g_log[r] = ga * a
            gx = a * g
            if cache["train"]:
                g_ms = -0.5 * ga * a / (cache["stats"][k] + self.eps)
                gx = gx + g_ms * 2.0 * v / m
            grads[k] = gx
        store.accumulate(self.key("log_gain"), g_log)
        return x.with_data(grads)
