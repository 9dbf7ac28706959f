"""
layers/attention.py -- Atencion steerable, feed-forward por posicion y bloque encoder.

Por irrep rho y cabeza h:
    q_i = f_i W_Q,  kf_j = f_j W_K,  v_j = f_j W_V              (multiplicacion por la derecha)
    s_ij = [ vec(q_i)^H vec(kf_j) + sum_a,k conj(q_i[a,k]) P_ij[a] w_pe[k] ] / sqrt(d_K)
    s   <- M1 s            (mezcla entre irreps, modo identity / shared-scalar / full-matrix)
    alpha_ij = softmax_j |s_ij|
    A   = M2 alpha
    o_i = sum_j A_ij v_j ;  salida = concat_h(o) W_O

P_ij = e^{-r^2} Y^rho(x_i - x_j) 1_{r>0}: e^{-ik theta} en 2D, armonicos esfericos en 3D.
Los puntajes son invariantes y los valores se transforman por rho(R), de modo que
la salida es equivariante.

Variantes:
  - literal_key_index: la clave usa f_i en lugar de f_j.
  - paper_literal_softmax: alpha_ij = exp|s_ij| / sum_j |s_ij| (sin exp en el denominador).
"""
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError, NumericError, ShapeChainError
from core.field import FieldBatch, FourierField
from core.group_math import IrrepId, irrep_dim, irrep_indices, spherical_harmonics_batch
from layers.nonlinear import (
    NORM_EPS,
    HarmonicBias,
    harmonic_backward,
    harmonic_forward,
    layer_norm_backward,
    layer_norm_forward,
    SteerableLayerNorm,
)
from layers.registry import LAYERS, ForwardContext, Layer, complex_init

MIX_IDENTITY = "identity"
MIX_SHARED = "shared-scalar"
MIX_FULL = "full-matrix"
MIXING_MODES = (MIX_IDENTITY, MIX_SHARED, MIX_FULL)
LITERAL_DENOM_EPS = 1e-12
ROW_SUM_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Configuracion y pesos
# ---------------------------------------------------------------------------

@dataclass
class AttentionConfig:
    """
    Hiperparametros de la atencion steerable.

    Atributos:
        d_model: Canales de entrada y salida.
        heads: Numero de cabezas h; d_K = d_V = d_model / h.
        cutoff: K o L.
        dim: 2 o 3.
        mixing_w1, mixing_w2: Modo de mezcla de puntajes y de pesos.
        layers: Capas del encoder.
        paper_literal_softmax: Denominador sin exp.
        literal_key_index: Claves construidas con f_i.
        ln_sqrt: Layer norm con raiz cuadrada.
    """
    d_model: int
    heads: int
    cutoff: int
    dim: int = 2
    mixing_w1: str = MIX_SHARED
    mixing_w2: str = MIX_IDENTITY
    layers: int = 1
    paper_literal_softmax: bool = False
    literal_key_index: bool = False
    ln_sqrt: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise InvalidArgumentError(f"heads={self.heads} debe dividir d_model={self.d_model}")
        for mode in (self.mixing_w1, self.mixing_w2):
            if mode not in MIXING_MODES:
                raise InvalidArgumentError(f"Modo de mezcla desconocido: {mode!r}. Validos: {MIXING_MODES}")
        if self.dim not in (2, 3):
            raise InvalidArgumentError(f"Dimension no soportada: {self.dim}")
        if self.layers < 1:
            raise InvalidArgumentError(f"layers debe ser >= 1: {self.layers}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def irreps(self) -> list[int]:
        return irrep_indices(self.dim, self.cutoff)

    @property
    def num_irreps(self) -> int:
        return len(self.irreps)


def _mixing_shape(mode: str, heads: int, r: int) -> Optional[tuple[int, ...]]:
    if mode == MIX_SHARED:
        return (heads, r)
    if mode == MIX_FULL:
        return (heads, r, r)
    return None


def _mixing_init(mode: str, heads: int, r: int) -> Optional[np.ndarray]:
    if mode == MIX_SHARED:
        return np.ones((heads, r), dtype=np.complex128)
    if mode == MIX_FULL:
        return np.broadcast_to(np.eye(r, dtype=np.complex128), (heads, r, r)).copy()
    return None


def mixing_matrix(mode: str, w: Optional[np.ndarray], heads: int, r: int) -> np.ndarray:
    """Matriz de mezcla [h, R, R]; shared-scalar usa M[p, q] = w[q]."""
    if mode == MIX_IDENTITY:
        return np.broadcast_to(np.eye(r, dtype=np.complex128), (heads, r, r))
    if mode == MIX_SHARED:
        return np.broadcast_to(w[:, None, :], (heads, r, r))
    return w


def _mixing_grad(mode: str, g_matrix: np.ndarray) -> Optional[np.ndarray]:
    if mode == MIX_SHARED:
        return g_matrix.sum(axis=1)
    if mode == MIX_FULL:
        return g_matrix
    return None


@dataclass
class AttentionWeights:
    """
    Pesos de una atencion multi-cabeza (primer eje: posicion de la irrep).

    Atributos:
        w_q, w_k: [R, h, C, d_K] complejos.
        w_v: [R, h, C, d_V] complejo.
        w_o: [R, h*d_V, C] complejo.
        w1, w2: Escalares de mezcla ([h, R] o [h, R, R]) o None en modo identity.
        w_pe: [h, R, d_K] real.
    """
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_pe: np.ndarray
    w1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None

    @staticmethod
    def shapes(cfg: AttentionConfig) -> dict[str, Optional[tuple[int, ...]]]:
        r, h, c, dk = cfg.num_irreps, cfg.heads, cfg.d_model, cfg.d_k
        return {
            "w_q": (r, h, c, dk), "w_k": (r, h, c, dk), "w_v": (r, h, c, dk),
            "w_o": (r, h * dk, c), "w_pe": (h, r, dk),
            "w1": _mixing_shape(cfg.mixing_w1, h, r), "w2": _mixing_shape(cfg.mixing_w2, h, r),
        }

    @classmethod
    def random(cls, cfg: AttentionConfig, rng: np.random.Generator) -> "AttentionWeights":
        r, h, c, dk = cfg.num_irreps, cfg.heads, cfg.d_model, cfg.d_k
        return cls(
            w_q=complex_init(rng, (r, h, c, dk), c),
            w_k=complex_init(rng, (r, h, c, dk), c),
            w_v=complex_init(rng, (r, h, c, dk), c),
            w_o=complex_init(rng, (r, h * dk, c), h * dk),
            w_pe=np.ones((h, r, dk)),
            w1=_mixing_init(cfg.mixing_w1, h, r),
            w2=_mixing_init(cfg.mixing_w2, h, r),
        )

    @classmethod
    def zeros(cls, cfg: AttentionConfig) -> "AttentionWeights":
        values = {}
        for name, shape in cls.shapes(cfg).items():
            if shape is None:
                values[name] = None
            else:
                values[name] = np.zeros(shape, dtype=np.float64 if name == "w_pe" else np.complex128)
        return cls(**values)

    def check(self, cfg: AttentionConfig):
        for name, shape in self.shapes(cfg).items():
            value = getattr(self, name)
            if (value is None) != (shape is None) or (value is not None and value.shape != shape):
                got = None if value is None else value.shape
                raise InvalidArgumentError(f"Peso {name} con forma {got}, se esperaba {shape}")


@dataclass
class FFNWeights:
    """W_1 [R, C, 2C], W_2 [R, 2C, C] complejos y sesgo armonico [R, 2C]."""
    w1: np.ndarray
    w2: np.ndarray
    bias: HarmonicBias

    @classmethod
    def random(cls, cfg: AttentionConfig, rng: np.random.Generator) -> "FFNWeights":
        r, c = cfg.num_irreps, cfg.d_model
        return cls(complex_init(rng, (r, c, 2 * c), c), complex_init(rng, (r, 2 * c, c), 2 * c),
                   HarmonicBias.zeros(r, 2 * c))

    @classmethod
    def zeros(cls, cfg: AttentionConfig) -> "FFNWeights":
        r, c = cfg.num_irreps, cfg.d_model
        return cls(np.zeros((r, c, 2 * c), complex), np.zeros((r, 2 * c, c), complex),
                   HarmonicBias.zeros(r, 2 * c))

    def check(self, cfg: AttentionConfig):
        r, c = cfg.num_irreps, cfg.d_model
        if self.w1.shape != (r, c, 2 * c) or self.w2.shape != (r, 2 * c, c) or self.bias.values.shape != (r, 2 * c):
            raise InvalidArgumentError(
                f"FFN con formas {self.w1.shape}, {self.w2.shape}, {self.bias.values.shape}; "
                f"d_hidden debe ser 2*d_model={2 * c}"
            )


@dataclass
class EncoderLayerWeights:
    attention: AttentionWeights
    ffn: FFNWeights


# ---------------------------------------------------------------------------
# Codificacion posicional
# ---------------------------------------------------------------------------

def _pe_values(delta: np.ndarray, dim: int, index: int) -> np.ndarray:
    """e^{-r^2} Y(delta) 1_{r>0} para offsets [..., dim] -> [..., d_rho]."""
    r2 = np.sum(delta ** 2, axis=-1)
    env = np.where(r2 > 0, np.exp(-r2), 0.0)
    if dim == 2:
        theta = np.arctan2(delta[..., 1], delta[..., 0])
        return (env * np.exp(-1j * index * theta))[..., None]
    return env[..., None] * spherical_harmonics_batch(index, delta)


def positional_encoding(delta: np.ndarray, irrep: IrrepId, w: float = 1.0) -> np.ndarray:
    """Codificacion relativa w * e^{-r^2} Y^rho(delta / r); nula en delta = 0."""
    d = np.asarray(delta, dtype=np.float64)
    dim = irrep.group.spatial_dim
    if d.shape != (dim,):
        raise InvalidArgumentError(f"Offset con forma {d.shape} para {irrep.group.value}")
    return w * _pe_values(d, dim, irrep.index)


def pe_basis(coords: np.ndarray, dim: int, cutoff: int) -> dict[int, np.ndarray]:
    """P_ij por irrep: {indice: [N, N, d_rho]} con offsets x_i - x_j."""
    delta = coords[:, None, :] - coords[None, :, :]
    return {k: _pe_values(delta, dim, k) for k in irrep_indices(dim, cutoff)}


# ---------------------------------------------------------------------------
# Atencion: adelante y adjunto
# ---------------------------------------------------------------------------

def _softmax_forward(t: np.ndarray, literal: bool) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if literal:
        z = np.sum(t, axis=-1, keepdims=True) + LITERAL_DENOM_EPS
        return np.exp(t) / z, z
    e = np.exp(t - np.max(t, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True), None


def _softmax_backward(alpha: np.ndarray, g_alpha: np.ndarray, z: Optional[np.ndarray], literal: bool) -> np.ndarray:
    if literal:
        return g_alpha * alpha - np.sum(g_alpha * alpha, axis=-1, keepdims=True) / z
    return alpha * (g_alpha - np.sum(alpha * g_alpha, axis=-1, keepdims=True))


def mha_forward(blocks: dict[int, np.ndarray], coords: np.ndarray, w: AttentionWeights,
                cfg: AttentionConfig) -> tuple[dict[int, np.ndarray], dict]:
    """Atencion multi-cabeza sobre bloques [B, N, d, C]."""
    irreps = cfg.irreps
    r_count, h, dk = cfg.num_irreps, cfg.heads, cfg.d_k
    scale = 1.0 / math.sqrt(dk)
    pe = pe_basis(coords, cfg.dim, cfg.cutoff)
    b, n = next(iter(blocks.values())).shape[:2]

    q, kf, v = {}, {}, {}
    sraw = np.zeros((b, h, r_count, n, n), dtype=np.complex128)
    for r, k in enumerate(irreps):
        f = blocks[k]
        q[k] = np.einsum("bnac,hck->bhnak", f, w.w_q[r], optimize=True)
        kf[k] = np.einsum("bnac,hck->bhnak", f, w.w_k[r], optimize=True)
        v[k] = np.einsum("bnac,hck->bhnak", f, w.w_v[r], optimize=True)
        qc = np.conj(q[k])
        if cfg.literal_key_index:
            feat = np.einsum("bhiak,bhiak->bhi", qc, kf[k])[..., None]
        else:
            feat = np.einsum("bhiak,bhjak->bhij", qc, kf[k], optimize=True)
        pos = np.einsum("bhiak,ija,hk->bhij", qc, pe[k], w.w_pe[:, r, :], optimize=True)
        sraw[:, :, r] = (feat + pos) * scale

    m1 = mixing_matrix(cfg.mixing_w1, w.w1, h, r_count)
    m2 = mixing_matrix(cfg.mixing_w2, w.w2, h, r_count)
    s = np.einsum("hpq,bhqij->bhpij", m1, sraw, optimize=True)
    t = np.abs(s)
    alpha, z = _softmax_forward(t, cfg.paper_literal_softmax)
    mixed = np.einsum("hpq,bhqij->bhpij", m2, alpha, optimize=True)

    out, o_cat = {}, {}
    for r, k in enumerate(irreps):
        o = np.einsum("bhij,bhjav->bhiav", mixed[:, :, r], v[k], optimize=True)
        o_cat[k] = np.transpose(o, (0, 2, 3, 1, 4)).reshape(b, n, irrep_dim(cfg.dim, k), h * dk)
        out[k] = np.einsum("bnaz,zc->bnac", o_cat[k], w.w_o[r], optimize=True)

    cache = {"blocks": blocks, "pe": pe, "q": q, "kf": kf, "v": v, "sraw": sraw, "s": s, "t": t,
             "alpha": alpha, "z": z, "mixed": mixed, "o_cat": o_cat, "m1": m1, "m2": m2}
    return out, cache


def mha_backward(cache: dict, grads: dict[int, np.ndarray], w: AttentionWeights,
                 cfg: AttentionConfig) -> tuple[dict[int, np.ndarray], AttentionWeights]:
    """Adjunto de mha_forward: gradientes de la entrada y de todos los pesos."""
    irreps = cfg.irreps
    r_count, h, dk = cfg.num_irreps, cfg.heads, cfg.d_k
    scale = 1.0 / math.sqrt(dk)
    blocks, q, kf, v = cache["blocks"], cache["q"], cache["kf"], cache["v"]
    alpha, mixed = cache["alpha"], cache["mixed"]
    gw = AttentionWeights.zeros(cfg)

    g_mixed = np.zeros_like(mixed)
    g_v = {}
    for r, k in enumerate(irreps):
        gy = grads[k]
        b, n, d = gy.shape[:3]
        gw.w_o[r] = np.einsum("bnaz,bnac->zc", np.conj(cache["o_cat"][k]), gy, optimize=True)
        g_cat = np.einsum("bnac,zc->bnaz", gy, np.conj(w.w_o[r]), optimize=True)
        g_o = np.transpose(g_cat.reshape(b, n, d, h, dk), (0, 3, 1, 2, 4))
        g_mixed[:, :, r] = np.einsum("bhiav,bhjav->bhij", g_o, np.conj(v[k]), optimize=True)
        g_v[k] = np.einsum("bhij,bhiav->bhjav", np.conj(mixed[:, :, r]), g_o, optimize=True)

    g_m2 = np.einsum("bhpij,bhqij->hpq", g_mixed, alpha, optimize=True)
    g_alpha = np.real(np.einsum("bhpij,hpq->bhqij", g_mixed, np.conj(cache["m2"]), optimize=True))
    g_t = _softmax_backward(alpha, g_alpha, cache["z"], cfg.paper_literal_softmax)
    s, t = cache["s"], cache["t"]
    g_s = g_t * np.divide(s, t, out=np.zeros_like(s), where=t > 0)
    g_m1 = np.einsum("bhpij,bhqij->hpq", g_s, np.conj(cache["sraw"]), optimize=True)
    g_sraw = np.einsum("hpq,bhpij->bhqij", np.conj(cache["m1"]), g_s, optimize=True)

    gw.w1 = _mixing_grad(cfg.mixing_w1, g_m1)
    gw.w2 = _mixing_grad(cfg.mixing_w2, g_m2)

    g_in = {}
    for r, k in enumerate(irreps):
        g_sc = g_sraw[:, :, r] * scale
        pe = cache["pe"][k]
        if cfg.literal_key_index:
            row = g_sc.sum(axis=-1)
            g_q = np.einsum("bhi,bhiak->bhiak", np.conj(row), kf[k])
            g_kf = np.einsum("bhi,bhiak->bhiak", row, q[k])
        else:
            g_q = np.einsum("bhij,bhjak->bhiak", np.conj(g_sc), kf[k], optimize=True)
            g_kf = np.einsum("bhij,bhiak->bhjak", g_sc, q[k], optimize=True)
        g_q = g_q + np.einsum("bhij,ija,hk->bhiak", np.conj(g_sc), pe, w.w_pe[:, r, :], optimize=True)
        gw.w_pe[:, r, :] = np.real(np.einsum("bhij,bhiak,ija->hk", np.conj(g_sc), np.conj(q[k]), pe,
                                             optimize=True))
        f = blocks[k]
        fc = np.conj(f)
        gw.w_q[r] = np.einsum("bnac,bhnak->hck", fc, g_q, optimize=True)
        gw.w_k[r] = np.einsum("bnac,bhnak->hck", fc, g_kf, optimize=True)
        gw.w_v[r] = np.einsum("bnac,bhnak->hck", fc, g_v[k], optimize=True)
        g_in[k] = (np.einsum("bhnak,hck->bnac", g_q, np.conj(w.w_q[r]), optimize=True)
                   + np.einsum("bhnak,hck->bnac", g_kf, np.conj(w.w_k[r]), optimize=True)
                   + np.einsum("bhnak,hck->bnac", g_v[k], np.conj(w.w_v[r]), optimize=True))
    return g_in, gw


def check_attention_rows(alpha: np.ndarray, literal: bool, where: str = "attention"):
    """Filas de alpha no negativas y, en la variante softmax, de suma 1."""
    if np.any(alpha < 0):
        raise NumericError("Pesos de atencion negativos", layer=where)
    if not literal:
        err = float(np.max(np.abs(alpha.sum(axis=-1) - 1.0), initial=0.0))
        if err > ROW_SUM_TOLERANCE:
            raise NumericError(f"Filas de atencion no normalizadas (error {err:.3e})", layer=where)


# ---------------------------------------------------------------------------
# Feed-forward
# ---------------------------------------------------------------------------

def ffn_forward(blocks: dict[int, np.ndarray], ffn: FFNWeights, irreps: list[int], eps: float,
                masks: Optional[dict[int, np.ndarray]] = None) -> tuple[dict[int, np.ndarray], dict]:
    out, cache = {}, {"blocks": blocks, "hidden": {}, "act": {}}
    for r, k in enumerate(irreps):
        hidden = np.einsum("bnac,ch->bnah", blocks[k], ffn.w1[r], optimize=True)
        act, hcache = harmonic_forward(hidden, ffn.bias.values[r], eps, None if masks is None else masks[k])
        cache["hidden"][k] = hcache
        cache["act"][k] = act
        out[k] = np.einsum("bnah,hc->bnac", act, ffn.w2[r], optimize=True)
    return out, cache


def ffn_backward(cache: dict, grads: dict[int, np.ndarray], ffn: FFNWeights, irreps: list[int],
                 eps: float) -> tuple[dict[int, np.ndarray], FFNWeights]:
    g_w1, g_w2 = np.zeros_like(ffn.w1), np.zeros_like(ffn.w2)
    g_bias = np.zeros_like(ffn.bias.values)
    g_in = {}
    for r, k in enumerate(irreps):
        gy = grads[k]
        act = cache["act"][k]
        g_w2[r] = np.einsum("bnah,bnac->hc", np.conj(act), gy, optimize=True)
        g_act = np.einsum("bnac,hc->bnah", gy, np.conj(ffn.w2[r]), optimize=True)
        g_hidden, g_bias[r] = harmonic_backward(cache["hidden"][k], g_act, eps)
        g_w1[r] = np.einsum("bnac,bnah->ch", np.conj(cache["blocks"][k]), g_hidden, optimize=True)
        g_in[k] = np.einsum("bnah,ch->bnac", g_hidden, np.conj(ffn.w1[r]), optimize=True)
    return g_in, FFNWeights(g_w1, g_w2, HarmonicBias(g_bias))


# ---------------------------------------------------------------------------
# API funcional
# ---------------------------------------------------------------------------

def _batched(field_: Union[FourierField, FieldBatch]) -> tuple[dict[int, np.ndarray], bool]:
    if isinstance(field_, FourierField):
        return {k: v[None] for k, v in field_.data.items()}, True
    return dict(field_.data), False


def _rewrap(field_, blocks: dict[int, np.ndarray], single: bool):
    if single:
        blocks = {k: v[0] for k, v in blocks.items()}
    return field_.with_data(blocks)


def _check_field(field_, cfg: AttentionConfig):
    if field_.channels != cfg.d_model:
        raise InvalidArgumentError(f"El campo tiene {field_.channels} canales, d_model={cfg.d_model}")
    if field_.dim != cfg.dim or field_.cutoff != cfg.cutoff:
        raise InvalidArgumentError(
            f"Campo (dim={field_.dim}, cutoff={field_.cutoff}) incompatible con la atencion "
            f"(dim={cfg.dim}, cutoff={cfg.cutoff})"
        )


def attention_scores(field_: FourierField, weights: AttentionWeights, head: int,
                     cfg: AttentionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Puntajes mezclados s [R, N, N] y pesos alpha [R, N, N] de una cabeza."""
    _check_field(field_, cfg)
    weights.check(cfg)
    if not 0 <= head < cfg.heads:
        raise InvalidArgumentError(f"Cabeza {head} fuera de rango [0, {cfg.heads})")
    blocks, _ = _batched(field_)
    _, cache = mha_forward(blocks, field_.coordinates(), weights, cfg)
    return cache["s"][0, head], cache["alpha"][0, head]


def steerable_self_attention(field_, weights: AttentionWeights, cfg: AttentionConfig):
    _check_field(field_, cfg)
    weights.check(cfg)
    blocks, single = _batched(field_)
    out, _ = mha_forward(blocks, field_.layout.coordinates(), weights, cfg)
    return _rewrap(field_, out, single)


def position_ffn(field_, ffn: FFNWeights, eps: float = NORM_EPS, cfg: Optional[AttentionConfig] = None):
    """sigma(f W_1) W_2 por irrep, con sigma la no linealidad armonica."""
    if ffn.w1.shape[1] != field_.channels:
        raise InvalidArgumentError(f"El campo tiene {field_.channels} canales, W_1 espera {ffn.w1.shape[1]}")
    if cfg is not None:
        ffn.check(cfg)
    blocks, single = _batched(field_)
    out, _ = ffn_forward(blocks, ffn, field_.irreps, eps)
    return _rewrap(field_, out, single)


def _add_blocks(a: dict, b: dict) -> dict:
    return {k: a[k] + b[k] for k in a}


def encoder_block(field_, weights: list[EncoderLayerWeights], cfg: AttentionConfig, eps: float = NORM_EPS):
    """z' = MHA(LN z) + z ; z'' = FFN(LN z') + z', repetido por capa."""
    _check_field(field_, cfg)
    if len(weights) != cfg.layers:
        raise InvalidArgumentError(f"Se esperaban pesos para {cfg.layers} capas, recibidos {len(weights)}")
    blocks, single = _batched(field_)
    coords = field_.layout.coordinates()
    for layer in weights:
        normed, _ = layer_norm_forward(blocks, eps, cfg.ln_sqrt)
        attn, _ = mha_forward(normed, coords, layer.attention, cfg)
        blocks = _add_blocks(blocks, attn)
        normed, _ = layer_norm_forward(blocks, eps, cfg.ln_sqrt)
        ff, _ = ffn_forward(normed, layer.ffn, cfg.irreps, eps)
        blocks = _add_blocks(blocks, ff)
    return _rewrap(field_, blocks, single)


# ---------------------------------------------------------------------------
# Capas
# ---------------------------------------------------------------------------

_ATTN_PARAMS = ("w_q", "w_k", "w_v", "w_o", "w_pe", "w1", "w2")


def _config_for(spec, heads: int, **options) -> AttentionConfig:
    return AttentionConfig(d_model=spec.channels, heads=heads, cutoff=spec.cutoff, dim=spec.dim, **options)


@LAYERS.register("steerable_self_attention")
class SteerableSelfAttention(Layer):
    """
    Atencion multi-cabeza steerable.

    Parametros: <name>.w_q, w_k, w_v, w_o (complejos), w_pe (real) y w1 / w2
    (complejos, solo en modos de mezcla distintos de identity).
    """

    def __init__(self, name: str, heads: int = 2, mixing_w1: str = MIX_SHARED, mixing_w2: str = MIX_IDENTITY,
                 paper_literal_softmax: bool = False, literal_key_index: bool = False):
        super().__init__(name)
        self.heads = int(heads)
        self.options = {"mixing_w1": mixing_w1, "mixing_w2": mixing_w2,
                        "paper_literal_softmax": bool(paper_literal_softmax),
                        "literal_key_index": bool(literal_key_index)}
        self.config: Optional[AttentionConfig] = None

    def output_spec(self, spec):
        spec = self.require_field(spec)
        try:
            self.config = _config_for(spec, self.heads, **self.options)
        except InvalidArgumentError as e:
            raise ShapeChainError(str(e), field=self.name) from e
        logger.debug(f"[LAYERS] {self.name}: h={self.heads}, d_K={self.config.d_k}, "
                     f"mezcla={self.options['mixing_w1']}/{self.options['mixing_w2']}")
        return spec

    def register(self, store, rng):
        init = AttentionWeights.random(self.config, rng)
        for pname in _ATTN_PARAMS:
            value = getattr(init, pname)
            if value is not None:
                store.register(self.key(pname), value.shape, "real" if pname == "w_pe" else "complex", value)

    def weights(self, store) -> AttentionWeights:
        return AttentionWeights(**{p: store.get(self.key(p)) if self.key(p) in store else None
                                   for p in _ATTN_PARAMS})

    def forward(self, store, x: FieldBatch, ctx: ForwardContext):
        w = self.weights(store)
        out, cache = mha_forward(x.data, x.layout.coordinates(), w, self.config)
        if ctx.record_attention:
            check_attention_rows(cache["alpha"], self.config.paper_literal_softmax, self.name)
            ctx.attention[self.name] = cache["alpha"]
        return x.with_data(out), cache

    def backward(self, store, cache, gy: FieldBatch):
        w = self.weights(store)
        g_in, gw = mha_backward(cache, gy.data, w, self.config)
        for pname in _ATTN_PARAMS:
            value = getattr(gw, pname)
            if value is not None:
                store.accumulate(self.key(pname), value)
        return gy.with_data(g_in)


@LAYERS.register("position_ffn")
class PositionFFN(Layer):
    """Parametros: <name>.w1, <name>.w2 (complejos) y <name>.bias (real [R, 2C])."""

    def __init__(self, name: str, eps: float = NORM_EPS):
        super().__init__(name)
        self.eps = float(eps)
        self.config: Optional[AttentionConfig] = None

    def output_spec(self, spec):
        spec = self.require_field(spec)
        self.config = _config_for(spec, 1, mixing_w1=MIX_IDENTITY)
        return spec

    def register(self, store, rng):
        init = FFNWeights.random(self.config, rng)
        store.register(self.key("w1"), init.w1.shape, "complex", init.w1)
        store.register(self.key("w2"), init.w2.shape, "complex", init.w2)
        store.register(self.key("bias"), init.bias.values.shape, "real", init.bias.values)

    def weights(self, store) -> FFNWeights:
        return FFNWeights(store.get(self.key("w1")), store.get(self.key("w2")),
                          HarmonicBias(store.get(self.key("bias"))))

    def forward(self, store, x: FieldBatch, ctx: ForwardContext):
        ffn = self.weights(store)
        masks = {}
        for r, k in enumerate(x.irreps):
            def compute(r=r, k=k):
                hidden = np.einsum("bnac,ch->bnah", x.data[k], ffn.w1[r], optimize=True)
                return np.sqrt(np.sum(np.abs(hidden) ** 2, axis=-2)) + ffn.bias.values[r] > 0
            masks[k] = ctx.gate(f"{self.name}.{k}", compute)
        out, cache = ffn_forward(x.data, ffn, x.irreps, self.eps, masks)
        return x.with_data(out), cache

    def backward(self, store, cache, gy: FieldBatch):
        g_in, grads = ffn_backward(cache, gy.data, self.weights(store), gy.irreps, self.eps)
        store.accumulate(self.key("w1"), grads.w1)
        store.accumulate(self.key("w2"), grads.w2)
        store.accumulate(self.key("bias"), grads.bias.values)
        return gy.with_data(g_in)


@LAYERS.register("encoder_block")
class EncoderBlock(Layer):
    """
    Encoder steerable: por capa, z + MHA(LN z) y despues z' + FFN(LN z').

    Las subcapas se nombran <name>.l<i>.{ln1, attn, ln2, ffn}.
    """

    def __init__(self, name: str, heads: int = 2, layers: int = 1, mixing_w1: str = MIX_SHARED,
                 mixing_w2: str = MIX_IDENTITY, paper_literal_softmax: bool = False,
                 literal_key_index: bool = False, ln_sqrt: bool = False, eps: float = NORM_EPS):
        super().__init__(name)
        if int(layers) < 1:
            raise InvalidArgumentError(f"layers debe ser >= 1: {layers}")
        self.stages = []
        for i in range(int(layers)):
            prefix = f"{name}.l{i}"
            self.stages.append((
                SteerableLayerNorm(f"{prefix}.ln1", eps=eps, use_sqrt=ln_sqrt),
                SteerableSelfAttention(f"{prefix}.attn", heads=heads, mixing_w1=mixing_w1, mixing_w2=mixing_w2,
                                       paper_literal_softmax=paper_literal_softmax,
                                       literal_key_index=literal_key_index),
                SteerableLayerNorm(f"{prefix}.ln2", eps=eps, use_sqrt=ln_sqrt),
                PositionFFN(f"{prefix}.ffn", eps=eps),
            ))

    def sublayers(self) -> list[Layer]:
        return [layer for stage in self.stages for layer in stage]

    def output_spec(self, spec):
        spec = self.require_field(spec)
        for layer in self.sublayers():
            spec = layer.build(spec)
        return spec

    def register(self, store, rng):
        for layer in self.sublayers():
            layer.register(store, rng)

    def forward(self, store, x: FieldBatch, ctx: ForwardContext):
        caches = []
        z = x
        for ln1, attn, ln2, ffn in self.stages:
            a, c1 = ln1.forward(store, z, ctx)
            a, c2 = attn.forward(store, a, ctx)
            z1 = z.with_data(_add_blocks(z.data, a.data))
            bvals, c3 = ln2.forward(store, z1, ctx)
            bvals, c4 = ffn.forward(store, bvals, ctx)
            z = z1.with_data(_add_blocks(z1.data, bvals.data))
            caches.append((c1, c2, c3, c4))
        return z, caches

    def backward(self, store, cache, gy: FieldBatch):
        g = gy
        for (ln1, attn, ln2, ffn), (c1, c2, c3, c4) in zip(reversed(self.stages), reversed(cache)):
            g_branch = ln2.backward(store, c3, ffn.backward(store, c4, g))
            g = g.with_data(_add_blocks(g.data, g_branch.data))
            g_branch = ln1.backward(store, c1, attn.backward(store, c2, g))
            g = g.with_data(_add_blocks(g.data, g_branch.data))
        return g
