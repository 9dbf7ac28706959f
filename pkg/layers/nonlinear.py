"""
layers/nonlinear.py -- No linealidades y normalizaciones en espacio de Fourier.

  - harmonic_nonlinearity: ReLU(||f|| + b) f / (||f|| + eps) por columna d_rho.
  - cg_nonlinearity: producto tensorial f (x) f proyectado con Clebsch-Gordan,
    concatenado a la entrada (los canales se duplican).
  - steerable_layer_norm: divide cada sitio por sum ||f||^2 + eps (o su raiz).
  - norm_flatten: vector invariante de normas del unico sitio restante.

Todas las funciones aceptan FourierField o FieldBatch y son puras.
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError, ShapeChainError
from core.field import FieldBatch, FourierField
from core.group_math import clebsch_gordan, irrep_indices
from layers.registry import LAYERS, FAMILY_FIELD, FieldSpec, ForwardContext, Layer, VectorSpec

NORM_EPS = 1e-6
AnyField = Union[FourierField, FieldBatch]


@dataclass
class HarmonicBias:
    """Sesgo real b por (irrep, canal); values tiene forma [R, C]."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidArgumentError(f"HarmonicBias con forma {self.values.shape}, se esperaba [R, C]")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("HarmonicBias con valores no finitos")

    @classmethod
    def zeros(cls, num_irreps: int, channels: int) -> "HarmonicBias":
        return cls(np.zeros((num_irreps, channels)))


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


# ---------------------------------------------------------------------------
# Nucleos con adjunto
# ---------------------------------------------------------------------------

def harmonic_forward(v: np.ndarray, bias: np.ndarray, eps: float,
                     mask: Optional[np.ndarray] = None) -> tuple[np.ndarray, dict]:
    """v [..., d, C], bias [C] -> salida y cache."""
    n = np.sqrt(np.sum(np.abs(v) ** 2, axis=-2))
    pre = n + bias
    if mask is None:
        mask = pre > 0
    u = np.where(mask, pre, 0.0)
    s = u / (n + eps)
    return s[..., None, :] * v, {"v": v, "n": n, "u": u, "s": s, "mask": mask}


def harmonic_backward(cache: dict, gy: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradientes (entrada, sesgo [C])."""
    v, n, u, s, mask = cache["v"], cache["n"], cache["u"], cache["s"], cache["mask"]
    q = np.sum(np.real(np.conj(gy) * v), axis=-2)
    den = n + eps
    ds_dn = (mask * den - u) / den ** 2
    gn = q * ds_dn
    gv = s[..., None, :] * gy + _safe_div(gn, n)[..., None, :] * v
    gb = np.sum((q * mask / den).reshape(-1, q.shape[-1]), axis=0)
    return gv, gb


def _cg_pairs(dim: int, cutoff: int) -> list[tuple[int, int, int]]:
    irreps = irrep_indices(dim, cutoff)
    pairs = []
    for k1 in irreps:
        for k2 in irreps:
            if dim == 2:
                if abs(k1 + k2) <= cutoff:
                    pairs.append((k1, k2, k1 + k2))
            else:
                for l in range(abs(k1 - k2), min(k1 + k2, cutoff) + 1):
                    pairs.append((k1, k2, l))
    return pairs


def cg_quadratic(blocks: dict[int, np.ndarray], dim: int, cutoff: int) -> dict[int, np.ndarray]:
    """Parte cuadratica por sitio y canal (sin concatenar)."""
    out = {k: np.zeros_like(v) for k, v in blocks.items()}
    for k1, k2, k in _cg_pairs(dim, cutoff):
        f1, f2 = blocks[k1], blocks[k2]
        if dim == 2:
            out[k] = out[k] + f1 * f2
        else:
            out[k] = out[k] + np.einsum("abM,...ac,...bc->...Mc", clebsch_gordan(k1, k2, k), f1, f2)
    return out


def cg_quadratic_backward(blocks: dict[int, np.ndarray], grads: dict[int, np.ndarray],
                          dim: int, cutoff: int) -> dict[int, np.ndarray]:
    out = {k: np.zeros_like(v) for k, v in blocks.items()}
    for k1, k2, k in _cg_pairs(dim, cutoff):
        f1, f2, g = blocks[k1], blocks[k2], grads[k]
        if dim == 2:
            out[k1] = out[k1] + np.conj(f2) * g
            out[k2] = out[k2] + np.conj(f1) * g
        else:
            cg = clebsch_gordan(k1, k2, k)
            out[k1] = out[k1] + np.einsum("abM,...bc,...Mc->...ac", cg, np.conj(f2), g)
            out[k2] = out[k2] + np.einsum("abM,...ac,...Mc->...bc", cg, np.conj(f1), g)
    return out


def layer_norm_forward(blocks: dict[int, np.ndarray], eps: float, use_sqrt: bool) -> tuple[dict, dict]:
    total = sum(np.sum(np.abs(v) ** 2, axis=(-2, -1)) for v in blocks.values())
    den = np.sqrt(total + eps) if use_sqrt else total + eps
    out = {k: v / den[..., None, None] for k, v in blocks.items()}
    return out, {"x": blocks, "y": out, "den": den}


def layer_norm_backward(cache: dict, grads: dict[int, np.ndarray], use_sqrt: bool) -> dict[int, np.ndarray]:
    den = cache["den"]
    g_den = -sum(np.sum(np.real(np.conj(grads[k]) * cache["y"][k]), axis=(-2, -1)) for k in grads) / den
    g_total = g_den / (2.0 * den) if use_sqrt else g_den
    return {
        k: grads[k] / den[..., None, None] + 2.0 * g_total[..., None, None] * cache["x"][k]
        for k in grads
    }


def _norm_vector(blocks: dict[int, np.ndarray], irreps: list[int]) -> tuple[np.ndarray, list[np.ndarray]]:
    """[..., 1, d, C] por irrep -> [..., R*C] en orden irrep-mayor."""
    norms = [np.sqrt(np.sum(np.abs(blocks[k][..., 0, :, :]) ** 2, axis=-2)) for k in irreps]
    return np.concatenate(norms, axis=-1), norms


# ---------------------------------------------------------------------------
# API funcional
# ---------------------------------------------------------------------------

def _bias_rows(bias, field_: AnyField) -> np.ndarray:
    values = bias.values if isinstance(bias, HarmonicBias) else np.asarray(bias, dtype=np.float64)
    expected = (len(field_.irreps), field_.channels)
    if values.shape != expected:
        raise InvalidArgumentError(f"Sesgo con forma {values.shape}, se esperaba {expected}")
    return values


def harmonic_nonlinearity(field_: AnyField, bias, eps: float = NORM_EPS) -> AnyField:
    """Compuerta de magnitud que preserva la direccion de cada columna."""
    if eps <= 0:
        raise InvalidArgumentError(f"eps debe ser positivo: {eps}")
    rows = _bias_rows(bias, field_)
    out = {k: harmonic_forward(field_.data[k], rows[r], eps)[0] for r, k in enumerate(field_.irreps)}
    return field_.with_data(out)


def cg_nonlinearity(field_: AnyField, cutoff: Optional[int] = None) -> AnyField:
    """Concatena la entrada con su producto CG truncado; los canales se duplican."""
    cutoff = field_.cutoff if cutoff is None else cutoff
    if cutoff < 0 or cutoff > field_.cutoff:
        raise InvalidArgumentError(f"cutoff {cutoff} fuera de [0, {field_.cutoff}]")
    quad = cg_quadratic(field_.data, field_.dim, cutoff)
    out = {k: np.concatenate([field_.data[k], quad[k]], axis=-1) for k in field_.irreps}
    return field_.with_data(out, channels=2 * field_.channels)


def steerable_layer_norm(field_: AnyField, eps: float = NORM_EPS, use_sqrt: bool = False) -> AnyField:
    """Divide cada sitio por sum_rho sum_c ||f||^2 + eps (o su raiz si use_sqrt)."""
    if eps <= 0:
        raise InvalidArgumentError(f"eps debe ser positivo: {eps}")
    out, _ = layer_norm_forward(field_.data, eps, use_sqrt)
    return field_.with_data(out)


def norm_flatten(field_: AnyField) -> np.ndarray:
    """Normas ||f(rho)|| del unico sitio, concatenadas por irrep y canal."""
    if field_.num_sites != 1:
        raise InvalidArgumentError(f"norm_flatten requiere un unico sitio, hay {field_.num_sites}")
    return _norm_vector(field_.data, field_.irreps)[0]


# ---------------------------------------------------------------------------
# Capas
# ---------------------------------------------------------------------------

@LAYERS.register("harmonic_nonlinearity")
class HarmonicNonlinearity(Layer):
    """Parametros: <name>.bias real [R, C]."""

    def __init__(self, name: str, eps: float = NORM_EPS):
        super().__init__(name)
        self.eps = float(eps)

    def output_spec(self, spec):
        return self.require_field(spec)

    def register(self, store, rng):
        spec = self.input_spec
        store.register(self.key("bias"), (len(irrep_indices(spec.dim, spec.cutoff)), spec.channels), "real")

    def forward(self, store, x: FieldBatch, ctx: ForwardContext):
        bias = store.get(self.key("bias"))
        out, caches = {}, {}
        for r, k in enumerate(x.irreps):
            v = x.data[k]
            mask = ctx.gate(f"{self.name}.{k}",
                            lambda v=v, b=bias[r]: np.sqrt(np.sum(np.abs(v) ** 2, axis=-2)) + b > 0)
            out[k], caches[k] = harmonic_forward(v, bias[r], self.eps, mask)
        return x.with_data(out), caches

    def backward(self, store, cache, gy: FieldBatch):
        g_bias = np.zeros((len(gy.irreps), gy.channels))
        grads = {}
        for r, k in enumerate(gy.irreps):
            grads[k], g_bias[r] = harmonic_backward(cache[k], gy.data[k], self.eps)
        store.accumulate(self.key("bias"), g_bias)
        return gy.with_data(grads)


@LAYERS.register("cg_nonlinearity")
class CGNonlinearity(Layer):
    """Sin parametros; duplica los canales."""

    def output_spec(self, spec):
        spec = self.require_field(spec)
        return spec.replace(channels=2 * spec.channels)

    def forward(self, store, x: FieldBatch, ctx):
        return cg_nonlinearity(x), x

    def backward(self, store, cache: FieldBatch, gy: FieldBatch):
        c = cache.channels
        lin = {k: g[..., :c] for k, g in gy.data.items()}
        quad = cg_quadratic_backward(cache.data, {k: g[..., c:] for k, g in gy.data.items()},
                                     cache.dim, cache.cutoff)
        return cache.with_data({k: lin[k] + quad[k] for k in lin})


@LAYERS.register("steerable_layer_norm")
class SteerableLayerNorm(Layer):
    """Normalizacion por sitio; use_sqrt elige la variante con raiz cuadrada."""

    def __init__(self, name: str, eps: float = NORM_EPS, use_sqrt: bool = False):
        super().__init__(name)
        self.eps = float(eps)
        self.use_sqrt = bool(use_sqrt)

    def output_spec(self, spec):
        return self.require_field(spec)

    def forward(self, store, x: FieldBatch, ctx):
        out, cache = layer_norm_forward(x.data, self.eps, self.use_sqrt)
        return x.with_data(out), cache

    def backward(self, store, cache, gy: FieldBatch):
        return gy.with_data(layer_norm_backward(cache, gy.data, self.use_sqrt))


@LAYERS.register("norm_flatten", family=FAMILY_FIELD)
class NormFlatten(Layer):
    """Campo de un sitio -> vector real invariante [B, R*C]."""

    def output_spec(self, spec):
        spec = self.require_field(spec)
        if spec.num_sites != 1:
            raise ShapeChainError(
                f"norm_flatten requiere un unico sitio, recibe {spec.describe()}", field=self.name
            )
        return VectorSpec(len(irrep_indices(spec.dim, spec.cutoff)) * spec.channels)

    def forward(self, store, x: FieldBatch, ctx):
        if x.num_sites != 1:
            raise InvalidArgumentError(f"{self.name}: se esperaba un unico sitio, hay {x.num_sites}")
        vec, norms = _norm_vector(x.data, x.irreps)
        return vec, {"x": x, "norms": norms}

    def backward(self, store, cache, gy: np.ndarray):
        x: FieldBatch = cache["x"]
        c = x.channels
        grads = {}
        for r, k in enumerate(x.irreps):
            g = gy[:, r * c:(r + 1) * c]
            scale = _safe_div(g, cache["norms"][r])
            grads[k] = scale[:, None, None, :] * x.data[k]
        return x.with_data(grads)
