"""
tests/test_attention.py -- Tests de atencion steerable, FFN por posicion y encoder.

Verifica:
  - Caso degenerado (una irrep, sin codificacion posicional) contra atencion plana.
  - Pesos uniformes, variantes literales y modos de mezcla.
  - Validacion de filas de alpha y de hiperparametros.
  - Equivarianza de atencion, FFN y encoder en todas sus variantes.
"""
import sys
import os
import math
import pytest
import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ["LOGURU_LEVEL"] = "ERROR"
from loguru import logger
logger.remove()

from core.errors import InvalidArgumentError, NumericError
from core.field import FourierField, SiteLayout
from core.group_math import Group, IrrepId
from layers.attention import (
    MIX_FULL,
    MIX_IDENTITY,
    MIX_SHARED,
    AttentionConfig,
    AttentionWeights,
    EncoderLayerWeights,
    FFNWeights,
    attention_scores,
    check_attention_rows,
    encoder_block,
    position_ffn,
    positional_encoding,
    steerable_self_attention,
)


def _points_field(dim: int, cutoff: int, channels: int, n: int = 5, seed: int = 0) -> FourierField:
    rng = np.random.default_rng(seed)
    return FourierField.random(SiteLayout.point_set(rng.normal(size=(n, dim))), cutoff, channels, rng)


def _zero_pe(weights: AttentionWeights) -> AttentionWeights:
    weights.w_pe = np.zeros_like(weights.w_pe)
    return weights


# ---------------------------------------------------------------
# Casos de referencia
# ---------------------------------------------------------------

class TestReferenceCases:
    def test_degenerates_to_plain_attention(self):
        """Con cutoff 0, una cabeza y w_pe = 0 es atencion con softmax de |s|."""
        cfg = AttentionConfig(d_model=4, heads=1, cutoff=0, dim=2, mixing_w1=MIX_IDENTITY)
        w = _zero_pe(AttentionWeights.random(cfg, np.random.default_rng(1)))
        f = _points_field(2, 0, 4, n=6)

        x = f.data[0][:, 0, :]
        q, k, v = x @ w.w_q[0, 0], x @ w.w_k[0, 0], x @ w.w_v[0, 0]
        t = np.abs(np.conj(q) @ k.T) / math.sqrt(4)
        alpha = np.exp(t - t.max(axis=1, keepdims=True))
        alpha /= alpha.sum(axis=1, keepdims=True)
        expected = (alpha @ v) @ w.w_o[0]

        out = steerable_self_attention(f, w, cfg)
        assert np.allclose(out.data[0][:, 0, :], expected, atol=1e-12)

    def test_zero_scores_give_uniform_rows(self):
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1, dim=2)
        w = _zero_pe(AttentionWeights.random(cfg, np.random.default_rng(2)))
        w.w_q = np.zeros_like(w.w_q)
        f = _points_field(2, 1, 4, n=7)
        _, alpha = attention_scores(f, w, 1, cfg)
        assert np.allclose(alpha, 1.0 / 7.0)

    def test_literal_key_index_ignores_keys(self):
        """Con la clave indexada por i y sin codificacion posicional las filas son uniformes."""
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1, dim=3, literal_key_index=True)
        w = _zero_pe(AttentionWeights.random(cfg, np.random.default_rng(3)))
        _, alpha = attention_scores(_points_field(3, 1, 4, n=5), w, 0, cfg)
        assert np.allclose(alpha, 0.2)

    def test_literal_softmax_denominator(self):
        """exp(t) / (sum t + 1e-12): con puntajes nulos cada peso vale 1e12."""
        cfg = AttentionConfig(d_model=2, heads=1, cutoff=0, dim=2, paper_literal_softmax=True)
        w = _zero_pe(AttentionWeights.random(cfg, np.random.default_rng(4)))
        w.w_k = np.zeros_like(w.w_k)
        _, alpha = attention_scores(_points_field(2, 0, 2, n=3), w, 0, cfg)
        assert np.allclose(alpha, 1e12)
        check_attention_rows(alpha, literal=True)
        with pytest.raises(NumericError):
            check_attention_rows(alpha, literal=False)

    def test_negative_rows_rejected(self):
        with pytest.raises(NumericError) as exc:
            check_attention_rows(np.array([[0.5, -0.1, 0.6]]), literal=True, where="enc1")
        assert exc.value.layer == "enc1"


# ---------------------------------------------------------------
# Mezcla entre irreps
# ---------------------------------------------------------------

class TestMixing:
    def test_shared_scalar_ones_equalizes_irreps(self):
        """M[p, q] = w[q] = 1 da el mismo puntaje mezclado a todas las irreps."""
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1, dim=2, mixing_w1=MIX_SHARED)
        w = AttentionWeights.random(cfg, np.random.default_rng(5))
        s, alpha = attention_scores(_points_field(2, 1, 4), w, 0, cfg)
        for r in range(1, 3):
            assert np.allclose(s[r], s[0])
            assert np.allclose(alpha[r], alpha[0])

    def test_full_matrix_identity_matches_identity_mode(self):
        f = _points_field(3, 1, 4, seed=6)
        base = AttentionConfig(d_model=4, heads=2, cutoff=1, dim=3, mixing_w1=MIX_IDENTITY)
        full = AttentionConfig(d_model=4, heads=2, cutoff=1, dim=3, mixing_w1=MIX_FULL, mixing_w2=MIX_FULL)
        wb = AttentionWeights.random(base, np.random.default_rng(7))
        wf = AttentionWeights.random(full, np.random.default_rng(7))
        yb = steerable_self_attention(f, wb, base)
        yf = steerable_self_attention(f, wf, full)
        for k in f.irreps:
            assert np.allclose(yb.data[k], yf.data[k], atol=1e-12)

    def test_weight_shapes_by_mode(self):
        cfg = AttentionConfig(d_model=6, heads=3, cutoff=2, dim=2, mixing_w1=MIX_FULL, mixing_w2=MIX_SHARED)
        shapes = AttentionWeights.shapes(cfg)
        assert shapes["w1"] == (3, 5, 5)
        assert shapes["w2"] == (3, 5)
        assert shapes["w_q"] == (5, 3, 6, 2)


# ---------------------------------------------------------------
# Validaciones
# ---------------------------------------------------------------

class TestValidation:
    def test_heads_must_divide_d_model(self):
        with pytest.raises(InvalidArgumentError):
            AttentionConfig(d_model=6, heads=4, cutoff=1)

    def test_unknown_mixing_mode(self):
        with pytest.raises(InvalidArgumentError):
            AttentionConfig(d_model=4, heads=2, cutoff=1, mixing_w1="diagonal")

    def test_head_out_of_range(self):
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1)
        w = AttentionWeights.random(cfg, np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            attention_scores(_points_field(2, 1, 4), w, 2, cfg)

    def test_channel_mismatch(self):
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1)
        w = AttentionWeights.random(cfg, np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            steerable_self_attention(_points_field(2, 1, 2), w, cfg)

    def test_weight_shape_checked(self):
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1, mixing_w1=MIX_FULL)
        w = AttentionWeights.random(cfg, np.random.default_rng(0))
        w.w1 = None
        with pytest.raises(InvalidArgumentError):
            steerable_self_attention(_points_field(2, 1, 4), w, cfg)

    def test_ffn_hidden_width(self):
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1)
        ffn = FFNWeights.random(AttentionConfig(d_model=4, heads=1, cutoff=1), np.random.default_rng(0))
        ffn.w1 = ffn.w1[..., :6]
        with pytest.raises(InvalidArgumentError):
            position_ffn(_points_field(2, 1, 4), ffn, cfg=cfg)

    def test_encoder_layer_count(self):
        cfg = AttentionConfig(d_model=4, heads=2, cutoff=1, layers=2)
        rng = np.random.default_rng(0)
        one = [EncoderLayerWeights(AttentionWeights.random(cfg, rng), FFNWeights.random(cfg, rng))]
        with pytest.raises(InvalidArgumentError):
            encoder_block(_points_field(2, 1, 4), one, cfg)


# ---------------------------------------------------------------
# Codificacion posicional
# ---------------------------------------------------------------

class TestPositionalEncoding:
    def test_zero_offset_vanishes(self):
        assert np.all(positional_encoding(np.zeros(3), IrrepId(Group.SO3, 2)) == 0)

    def test_2d_value(self):
        pe = positional_encoding(np.array([0.0, 1.0]), IrrepId(Group.SO2, 2), w=2.0)
        assert np.allclose(pe, [2.0 * math.exp(-1.0) * np.exp(-1j * math.pi)])

    def test_dimension_checked(self):
        with pytest.raises(InvalidArgumentError):
            positional_encoding(np.zeros(3), IrrepId(Group.SO2, 1))


# ---------------------------------------------------------------
# Equivarianza
# ---------------------------------------------------------------

def _passes(layer_type: str, dim: int, cutoff: int, **kwargs) -> list:
    from harness.audit import audit_equivariance
    from harness.bindings import layer_target

    target = layer_target(layer_type, dim, cutoff, seed=3, **kwargs)
    return [audit_equivariance(target, 4, 1e-9, mode, 0) for mode in target.modes]


class TestEquivariance:
    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("options", [
        dict(mixing_w1=MIX_IDENTITY, mixing_w2=MIX_IDENTITY),
        dict(mixing_w1=MIX_SHARED, mixing_w2=MIX_SHARED),
        dict(mixing_w1=MIX_FULL, mixing_w2=MIX_FULL),
        dict(paper_literal_softmax=True),
        dict(literal_key_index=True),
    ])
    def test_attention_variants(self, dim, options):
        for report in _passes("steerable_self_attention", dim, 1, heads=2, **options):
            assert report.passed, (report.mode, report.worst)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_position_ffn(self, dim):
        for report in _passes("position_ffn", dim, 2):
            assert report.passed, (report.mode, report.worst)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_encoder_two_layers_sqrt_norm(self, dim):
        for report in _passes("encoder_block", dim, 1, heads=2, layers=2, ln_sqrt=True):
            assert report.passed, (report.mode, report.worst)

    def test_encoder_sublayer_names(self):
        from layers.attention import EncoderBlock

        block = EncoderBlock("enc", heads=2, layers=2)
        names = [layer.name for layer in block.sublayers()]
        assert names[:4] == ["enc.l0.ln1", "enc.l0.attn", "enc.l0.ln2", "enc.l0.ffn"]
        assert len(names) == 8
