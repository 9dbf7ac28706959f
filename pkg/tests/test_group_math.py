"""
tests/test_group_math.py -- Tests de matematica de grupos (SO(2), SO(3), SE(d)).

Verifica:
  - Homomorfismo y unitaridad de las irreps.
  - Wigner-D de grado 1 frente a la matriz de rotacion.
  - Steerabilidad de los armonicos esfericos.
  - Ortonormalidad e interpolacion de Clebsch-Gordan.
  - Ida y vuelta de Fourier en SO(2).
  - Composicion, inversa y muestreo de elementos de SE(d).
"""
import sys
import os
import math
from pathlib import Path
import pytest
import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ["LOGURU_LEVEL"] = "ERROR"
from loguru import logger
logger.remove()

from core.errors import InvalidArgumentError
from core.group_math import (
    CG_TABLE,
    CGTable,
    Group,
    GroupElement,
    IrrepId,
    clebsch_gordan,
    euler_from_matrix,
    fourier_so2,
    haar_random_rotation,
    inverse_fourier_so2,
    irrep_eval,
    irrep_indices,
    lattice_rotations,
    random_lattice_element,
    random_se_element,
    rotation_matrix_3d,
    se_apply,
    se_compose,
    se_inverse,
    spherical_harmonics,
    spherical_harmonics_batch,
    wigner_d,
)

angles = st.floats(min_value=0.0, max_value=2 * math.pi, allow_nan=False)
polar = st.floats(min_value=0.0, max_value=math.pi, allow_nan=False)


# ---------------------------------------------------------------
# Irreps
# ---------------------------------------------------------------

class TestIrreps:
    def test_indices_2d(self):
        """En 2D las irreps van de -K a K."""
        assert irrep_indices(2, 2) == [-2, -1, 0, 1, 2]

    def test_indices_3d(self):
        """En 3D los grados van de 0 a L."""
        assert irrep_indices(3, 3) == [0, 1, 2, 3]

    def test_negative_cutoff_rejected(self):
        with pytest.raises(InvalidArgumentError):
            irrep_indices(2, -1)

    def test_negative_so3_degree_rejected(self):
        with pytest.raises(InvalidArgumentError):
            IrrepId(Group.SO3, -1)

    def test_irrep_dims(self):
        assert IrrepId(Group.SO2, -3).dim == 1
        assert IrrepId(Group.SO3, 2).dim == 5

    def test_group_mismatch_rejected(self):
        """Una irrep de SO(3) no se evalua en un elemento de SE(2)."""
        with pytest.raises(InvalidArgumentError):
            irrep_eval(IrrepId(Group.SO3, 1), GroupElement.from_angle(0.3))

    @given(a=angles, b=angles, k=st.integers(min_value=-4, max_value=4))
    @settings(max_examples=40, deadline=None)
    def test_so2_homomorphism(self, a, b, k):
        ir = IrrepId(Group.SO2, k)
        g1, g2 = GroupElement.from_angle(a), GroupElement.from_angle(b)
        lhs = irrep_eval(ir, se_compose(g1, g2))
        rhs = irrep_eval(ir, g1) @ irrep_eval(ir, g2)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    @given(a1=angles, b1=polar, c1=angles, a2=angles, b2=polar, c2=angles,
           l=st.integers(min_value=0, max_value=3))
    @settings(max_examples=40, deadline=None)
    def test_so3_homomorphism(self, a1, b1, c1, a2, b2, c2, l):
        """D(g1 g2) = D(g1) D(g2) a traves de la extraccion de Euler."""
        ir = IrrepId(Group.SO3, l)
        g1 = GroupElement.from_euler(a1, b1, c1)
        g2 = GroupElement.from_euler(a2, b2, c2)
        lhs = irrep_eval(ir, se_compose(g1, g2))
        rhs = irrep_eval(ir, g1) @ irrep_eval(ir, g2)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    @pytest.mark.parametrize("l", [0, 1, 2, 3, 4])
    def test_wigner_unitary(self, l):
        rng = np.random.default_rng(l)
        g = haar_random_rotation(Group.SO3, rng)
        d = irrep_eval(IrrepId(Group.SO3, l), g)
        assert np.max(np.abs(d @ d.conj().T - np.eye(2 * l + 1))) <= 1e-10

    def test_wigner_d1_similar_to_rotation(self):
        """La traza de D^1 coincide con la de la matriz 3x3 (son conjugadas)."""
        rng = np.random.default_rng(7)
        for _ in range(10):
            g = haar_random_rotation(Group.SO3, rng)
            d1 = wigner_d(1, *g.angles)
            r = g.rotation_matrix()
            assert abs(np.trace(d1) - np.trace(r)) <= 1e-10
            assert np.allclose(np.sort(np.abs(np.linalg.eigvals(d1))), 1.0, atol=1e-10)

    def test_wigner_identity(self):
        assert np.allclose(wigner_d(2, 0.0, 0.0, 0.0), np.eye(5), atol=1e-14)


# ---------------------------------------------------------------
# Armonicos esfericos
# ---------------------------------------------------------------

class TestSphericalHarmonics:
    @pytest.mark.parametrize("l", [0, 1, 2, 3])
    def test_steerability(self, l):
        """Y(Q x) = D(Q) Y(x)."""
        rng = np.random.default_rng(100 + l)
        for _ in range(10):
            x = rng.normal(size=3)
            x /= np.linalg.norm(x)
            g = haar_random_rotation(Group.SO3, rng)
            lhs = spherical_harmonics(l, g.rotation_matrix() @ x)
            rhs = wigner_d(l, *g.angles) @ spherical_harmonics(l, x)
            assert np.max(np.abs(lhs - rhs)) <= 1e-9

    def test_l0_constant(self):
        y = spherical_harmonics(0, np.array([0.0, 0.0, 1.0]))
        assert abs(y[0] - 1.0 / math.sqrt(4.0 * math.pi)) <= 1e-14

    def test_addition_theorem(self):
        """sum_m |Y_m|^2 = (2l+1) / 4pi."""
        x = np.array([0.3, -0.4, 0.866])
        x /= np.linalg.norm(x)
        for l in range(4):
            y = spherical_harmonics(l, x)
            assert abs(np.sum(np.abs(y) ** 2) - (2 * l + 1) / (4 * math.pi)) <= 1e-12

    def test_non_unit_direction_rejected(self):
        with pytest.raises(InvalidArgumentError):
            spherical_harmonics(1, np.array([1.0, 1.0, 0.0]))

    def test_batch_zero_vector_is_zero(self):
        y = spherical_harmonics_batch(2, np.zeros((2, 3)))
        assert np.all(y == 0)


# ---------------------------------------------------------------
# Clebsch-Gordan
# ---------------------------------------------------------------

class TestClebschGordan:
    @pytest.mark.parametrize("l1,l2", [(0, 0), (1, 1), (1, 2), (2, 2), (3, 1)])
    def test_orthonormal(self, l1, l2):
        """Los bloques l = |l1-l2|..l1+l2 forman una matriz ortogonal."""
        cols = [clebsch_gordan(l1, l2, l).reshape(-1, 2 * l + 1) for l in range(abs(l1 - l2), l1 + l2 + 1)]
        u = np.concatenate(cols, axis=1)
        assert u.shape[0] == u.shape[1]
        assert np.max(np.abs(u.T @ u - np.eye(u.shape[1]))) <= 1e-12

    @pytest.mark.parametrize("l1,l2,l", [(1, 1, 0), (1, 1, 2), (1, 2, 2), (2, 2, 1), (2, 1, 3)])
    def test_intertwiner(self, l1, l2, l):
        """(D1 x D2) C = C D."""
        g = haar_random_rotation(Group.SO3, 11)
        d1, d2, d = (wigner_d(x, *g.angles) for x in (l1, l2, l))
        c = clebsch_gordan(l1, l2, l)
        lhs = np.einsum("ab,cd,bdM->acM", d1, d2, c)
        rhs = np.einsum("acN,NM->acM", c, d)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10

    def test_triangle_violation_is_zero(self):
        assert np.all(clebsch_gordan(1, 1, 3) == 0)

    def test_known_value(self):
        """<1 0; 1 0 | 0 0> = -1/sqrt(3)."""
        assert abs(clebsch_gordan(1, 1, 0)[1, 1, 0] + 1.0 / math.sqrt(3.0)) <= 1e-15

    def test_blocks_are_cached_read_only(self):
        table = CGTable()
        block = table.block(2, 1, 2)
        assert table.block(2, 1, 2) is block
        with pytest.raises(ValueError):
            block[0, 0, 0] = 1.0

    def test_precompute_freezes_table(self):
        table = CGTable()
        assert table.precompute(2) == 27
        entries = table.entries
        assert table.block(1, 1, 0) is entries[(1, 1, 0)]
        beyond = table.block(3, 1, 2)
        assert (3, 1, 2) not in table.entries
        assert table.entries is entries and len(entries) == 27
        assert np.array_equal(beyond, CGTable().block(3, 1, 2))

    def test_precompute_matches_lazy_blocks(self):
        table = CGTable()
        table.precompute(1)
        assert np.array_equal(table.block(1, 1, 1), clebsch_gordan(1, 1, 1))
        with pytest.raises(InvalidArgumentError):
            table.precompute(-1)

    def test_build_model_warms_3d_table(self):
        from core.config import load_config
        from training.model import build_model

        config = load_config(Path(__file__).parent.parent / "config" / "experiments" / "se3_voxels.yaml")
        build_model(config)
        assert CG_TABLE.frozen_cutoff is not None
        assert CG_TABLE.frozen_cutoff >= config.model.cutoff


# ---------------------------------------------------------------
# Fourier SO(2)
# ---------------------------------------------------------------

class TestFourierSO2:
    @pytest.mark.parametrize("cutoff,num", [(0, 1), (2, 5), (3, 40), (8, 17)])
    def test_round_trip(self, cutoff, num):
        rng = np.random.default_rng(cutoff)
        coeffs = rng.normal(size=2 * cutoff + 1) + 1j * rng.normal(size=2 * cutoff + 1)
        samples = inverse_fourier_so2(coeffs, num)
        assert np.max(np.abs(fourier_so2(samples, cutoff) - coeffs)) <= 1e-10

    def test_aliasing_rejected(self):
        with pytest.raises(InvalidArgumentError):
            fourier_so2(np.ones(4), 2)

    def test_constant_signal(self):
        c = fourier_so2(np.full(8, 3.0), 1)
        assert np.allclose(c, [0.0, 3.0, 0.0], atol=1e-14)


# ---------------------------------------------------------------
# Elementos de SE(d)
# ---------------------------------------------------------------

class TestGroupElements:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_inverse_composes_to_identity(self, dim):
        rng = np.random.default_rng(dim)
        g = random_se_element(dim, rng)
        e = se_compose(g, se_inverse(g))
        assert np.allclose(e.rotation_matrix(), np.eye(dim), atol=1e-12)
        assert np.allclose(e.translation_vector(), 0.0, atol=1e-12)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_apply_respects_composition(self, dim):
        rng = np.random.default_rng(10 + dim)
        g1, g2 = random_se_element(dim, rng), random_se_element(dim, rng)
        x = rng.normal(size=(5, dim))
        lhs = se_apply(se_compose(g1, g2), x)
        rhs = se_apply(g1, se_apply(g2, x))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_identity_flags(self):
        assert GroupElement.identity(2).is_identity
        assert GroupElement.identity(3).is_identity
        assert not GroupElement.from_angle(0.1).is_identity

    def test_dict_round_trip(self):
        g = random_se_element(3, 5)
        assert GroupElement.from_dict(g.to_dict()) == g

    def test_translation_dimension_checked(self):
        with pytest.raises(InvalidArgumentError):
            GroupElement((0.0, 0.0), (0.1, 0.2, 0.3))

    def test_apply_dimension_checked(self):
        with pytest.raises(InvalidArgumentError):
            se_apply(GroupElement.identity(2), np.zeros(3))

    def test_euler_gimbal_cases(self):
        """beta = 0 y beta = pi conservan la matriz."""
        for beta in (0.0, 1e-9, math.pi - 1e-9, math.pi):
            r = rotation_matrix_3d(0.7, beta, 1.9)
            assert np.max(np.abs(rotation_matrix_3d(*euler_from_matrix(r)) - r)) <= 1e-11

    @pytest.mark.parametrize("dim,count", [(2, 4), (3, 24)])
    def test_lattice_rotations(self, dim, count):
        rots = lattice_rotations(dim)
        assert len(rots) == count
        for g in rots:
            r = g.rotation_matrix()
            assert np.allclose(r, np.rint(r), atol=1e-12)
            assert abs(np.linalg.det(r) - 1.0) <= 1e-12

    def test_random_lattice_element_shift(self):
        g = random_lattice_element(2, 3, max_shift=2)
        assert all(float(t).is_integer() and abs(t) <= 2 for t in g.translation)

    def test_haar_deterministic_per_seed(self):
        assert haar_random_rotation(Group.SO3, 42) == haar_random_rotation(Group.SO3, 42)

    def test_haar_so3_orthogonal(self):
        r = haar_random_rotation("SO3", 1).rotation_matrix()
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
