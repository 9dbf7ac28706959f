"""
tests/test_nonlinear.py -- Tests de no linealidades y normalizaciones steerables.

Verifica:
  - Compuerta harmonica: direccion preservada, sesgo y validaciones.
  - Producto de Clebsch-Gordan: canales duplicados, terminos cuadraticos y
    cuadrado punto a punto sobre una malla angular.
  - Layer norm con y sin raiz cuadrada.
  - norm_flatten: un unico sitio e invariancia.
  - Equivarianza de cada capa (nubes de puntos y rejilla).
"""
import sys
import os
import pytest
import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ["LOGURU_LEVEL"] = "ERROR"
from loguru import logger
logger.remove()

from core.errors import InvalidArgumentError
from core.field import FieldBatch, FourierField, SiteLayout, act_group
from core.group_math import fourier_so2, inverse_fourier_so2, random_se_element
from layers.nonlinear import (
    HarmonicBias,
    cg_nonlinearity,
    harmonic_nonlinearity,
    norm_flatten,
    steerable_layer_norm,
)


@pytest.fixture
def points_field():
    rng = np.random.default_rng(0)
    return FourierField.random(SiteLayout.point_set(rng.normal(size=(5, 2))), 1, 3, rng)


@pytest.fixture
def single_site_3d():
    return FourierField.random(SiteLayout.grid((1, 1, 1)), 2, 2, np.random.default_rng(1))


# ---------------------------------------------------------------
# Compuerta harmonica
# ---------------------------------------------------------------

class TestHarmonic:
    def test_zero_bias_is_near_identity(self, points_field):
        out = harmonic_nonlinearity(points_field, HarmonicBias.zeros(3, 3), eps=1e-12)
        for k in points_field.irreps:
            assert np.allclose(out.data[k], points_field.data[k], atol=1e-9)

    def test_large_negative_bias_kills(self, points_field):
        out = harmonic_nonlinearity(points_field, np.full((3, 3), -1e6))
        assert all(np.all(v == 0) for v in out.data.values())

    def test_direction_preserved(self, single_site_3d):
        bias = np.full((3, 2), 0.5)
        out = harmonic_nonlinearity(single_site_3d, bias)
        v, y = single_site_3d.data[2][0, :, 0], out.data[2][0, :, 0]
        n = np.linalg.norm(v)
        assert np.allclose(y, v * (n + 0.5) / (n + 1e-6))

    def test_bias_shape_checked(self, points_field):
        with pytest.raises(InvalidArgumentError):
            harmonic_nonlinearity(points_field, np.zeros((2, 3)))

    def test_eps_must_be_positive(self, points_field):
        with pytest.raises(InvalidArgumentError):
            harmonic_nonlinearity(points_field, np.zeros((3, 3)), eps=0.0)

    def test_non_finite_bias_rejected(self):
        with pytest.raises(InvalidArgumentError):
            HarmonicBias(np.array([[np.nan]]))


# ---------------------------------------------------------------
# Clebsch-Gordan
# ---------------------------------------------------------------

class TestCGNonlinearity:
    def test_channels_double_and_input_kept(self, points_field):
        out = cg_nonlinearity(points_field)
        assert out.channels == 6
        for k in points_field.irreps:
            assert np.array_equal(out.data[k][..., :3], points_field.data[k])

    def test_2d_quadratic_terms(self, points_field):
        """Con K=1 la irrep 0 recibe f_-1 f_1 + f_0^2 + f_1 f_-1."""
        f = points_field.data
        out = cg_nonlinearity(points_field)
        expected = 2.0 * f[-1] * f[1] + f[0] ** 2
        assert np.allclose(out.data[0][..., 3:], expected)
        assert np.allclose(out.data[1][..., 3:], 2.0 * f[0] * f[1])

    def test_2d_matches_pointwise_square(self):
        """Cuadrado punto a punto sobre una malla angular y vuelta a coeficientes."""
        rng = np.random.default_rng(7)
        field_ = FourierField.random(SiteLayout.point_set(rng.normal(size=(3, 2))), 2, 2, rng)
        out = cg_nonlinearity(field_)
        ks = field_.irreps
        coeffs = np.stack([field_.data[k][:, 0, :] for k in ks], axis=-1)
        samples = inverse_fourier_so2(coeffs, 16)
        oracle = fourier_so2(samples ** 2, 2)
        for i, k in enumerate(ks):
            assert np.allclose(out.data[k][:, 0, 2:], oracle[..., i], atol=1e-10)

    def test_truncated_cutoff_zeroes_high_orders(self, single_site_3d):
        out = cg_nonlinearity(single_site_3d, cutoff=1)
        assert np.all(out.data[2][..., 2:] == 0)
        assert np.any(out.data[1][..., 2:] != 0)

    def test_cutoff_out_of_range(self, points_field):
        with pytest.raises(InvalidArgumentError):
            cg_nonlinearity(points_field, cutoff=2)

    def test_3d_rotation_commutes(self, single_site_3d):
        g = random_se_element(3, 5).rotation_only()
        lhs = cg_nonlinearity(act_group(single_site_3d, g))
        rhs = act_group(cg_nonlinearity(single_site_3d), g)
        for k in single_site_3d.irreps:
            assert np.allclose(lhs.data[k], rhs.data[k], atol=1e-10)


# ---------------------------------------------------------------
# Normalizaciones
# ---------------------------------------------------------------

class TestLayerNorm:
    def _site_energy(self, field_):
        return sum(np.sum(np.abs(v) ** 2, axis=(-2, -1)) for v in field_.data.values())

    def test_default_divides_by_energy(self, points_field):
        eps = 1e-6
        total = self._site_energy(points_field)
        out = steerable_layer_norm(points_field, eps=eps)
        assert np.allclose(self._site_energy(out), total / (total + eps) ** 2)

    def test_sqrt_variant_has_unit_energy(self, points_field):
        out = steerable_layer_norm(points_field, eps=1e-12, use_sqrt=True)
        assert np.allclose(self._site_energy(out), 1.0)

    def test_zero_site_stays_zero(self):
        f = FourierField.zeros(SiteLayout.grid((2, 2)), 1, 1)
        out = steerable_layer_norm(f)
        assert all(np.all(v == 0) for v in out.data.values())

    def test_eps_must_be_positive(self, points_field):
        with pytest.raises(InvalidArgumentError):
            steerable_layer_norm(points_field, eps=-1.0)


class TestNormFlatten:
    def test_values_and_order(self, single_site_3d):
        vec = norm_flatten(single_site_3d)
        assert vec.shape == (3 * 2,)
        assert np.isclose(vec[2 * 2 + 1], np.linalg.norm(single_site_3d.data[2][0, :, 1]))

    def test_batch_shape(self):
        batch = FieldBatch.random(SiteLayout.grid((1, 1)), 2, 4, 3, np.random.default_rng(2))
        assert norm_flatten(batch).shape == (3, 5 * 4)

    def test_requires_single_site(self, points_field):
        with pytest.raises(InvalidArgumentError):
            norm_flatten(points_field)

    def test_invariant_under_rotation(self, single_site_3d):
        g = random_se_element(3, 8).rotation_only()
        assert np.allclose(norm_flatten(act_group(single_site_3d, g)), norm_flatten(single_site_3d))


# ---------------------------------------------------------------
# Auditorias por capa
# ---------------------------------------------------------------

class TestEquivarianceAudits:
    @pytest.mark.parametrize("layer_type", [
        "harmonic_nonlinearity", "cg_nonlinearity", "steerable_layer_norm", "norm_flatten",
    ])
    @pytest.mark.parametrize("dim,cutoff", [(2, 2), (3, 2)])
    def test_layer_passes_all_modes(self, layer_type, dim, cutoff):
        from harness.audit import audit_equivariance
        from layers import LAYERS
        import harness.bindings  # noqa: F401

        target = LAYERS.audit_binding(layer_type)(dim, cutoff, 0)
        for mode in target.modes:
            report = audit_equivariance(target, 5, 1e-9, mode, 0)
            assert report.passed, (mode, report.worst)
