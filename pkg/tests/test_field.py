"""
tests/test_field.py -- Tests de campos steerables y del formato STFL.

Verifica:
  - Construccion y validacion de SiteLayout / FourierField / FieldBatch.
  - Elevacion de imagenes a la irrep trivial.
  - act_group: identidad, permutacion exacta, nubes de puntos.
  - Serializacion STFL y sus errores tipados.
"""
import sys
import os
import struct
import pytest
import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ["LOGURU_LEVEL"] = "ERROR"
from loguru import logger
logger.remove()

from core.errors import (
    FieldFormatError,
    InvalidArgumentError,
    MagicMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from core.field import (
    INTERP_EXACT,
    INTERP_LINEAR,
    FieldBatch,
    FourierField,
    SiteLayout,
    act_group,
    field_norm,
    lift_scalar_image,
    norm_per_irrep,
)
from core.field_io import decode_field, encode_field, read_field, write_field
from core.group_math import (
    GroupElement,
    lattice_rotations,
    random_se_element,
    se_compose,
)


def _max_diff(a, b) -> float:
    return max(float(np.max(np.abs(a.data[k] - b.data[k]))) for k in a.irreps)


@pytest.fixture
def grid_field():
    return FourierField.random(SiteLayout.grid((5, 5)), 2, 3, np.random.default_rng(0))


@pytest.fixture
def voxel_field():
    return FourierField.random(SiteLayout.grid((3, 3, 3)), 1, 2, np.random.default_rng(1))


# ---------------------------------------------------------------
# Contenedores
# ---------------------------------------------------------------

class TestContainers:
    def test_grid_is_centered(self):
        layout = SiteLayout.grid((3, 5))
        coords = layout.coordinates()
        assert coords.shape == (15, 2)
        assert np.allclose(coords.mean(axis=0), 0.0)
        assert tuple(coords[0]) == (-1.0, -2.0)

    def test_invalid_grid_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SiteLayout.grid((4, 0))

    def test_points_must_be_finite(self):
        with pytest.raises(InvalidArgumentError):
            SiteLayout.point_set(np.array([[0.0, np.nan]]))

    def test_block_shape_checked(self):
        """Un bloque 3D de grado 1 debe tener d_rho = 3."""
        layout = SiteLayout.grid((2, 2, 2))
        data = FourierField.zeros(layout, 1, 1).data
        data[1] = np.zeros((8, 2, 1))
        with pytest.raises(InvalidArgumentError):
            FourierField(layout, 1, 1, data)

    def test_batch_field_and_subset(self):
        layout = SiteLayout.grid((4, 4))
        batch = FieldBatch.random(layout, 1, 2, 5, np.random.default_rng(3))
        assert batch.batch_size == 5
        sub = batch.subset(np.array([4, 1]))
        assert sub.batch_size == 2
        assert np.array_equal(sub.field(0).data[1], batch.field(4).data[1])

    def test_from_fields_requires_common_layout(self):
        a = FourierField.zeros(SiteLayout.grid((3, 3)), 1, 1)
        b = FourierField.zeros(SiteLayout.grid((4, 4)), 1, 1)
        with pytest.raises(InvalidArgumentError):
            FieldBatch.from_fields([a, b])

    def test_norm_per_irrep_shape(self, grid_field):
        norms = norm_per_irrep(grid_field)
        assert norms.shape == (25, 5, 3)
        assert np.all(norms >= 0)


# ---------------------------------------------------------------
# Elevacion de imagenes
# ---------------------------------------------------------------

class TestLift:
    def test_scalar_image_in_trivial_irrep(self):
        img = np.arange(12, dtype=np.float64).reshape(3, 4) / 11.0
        f = lift_scalar_image(img, 2)
        assert f.layout.shape == (3, 4)
        assert np.allclose(f.data[0][:, 0, 0].real, img.ravel())
        for k in (-2, -1, 1, 2):
            assert np.all(f.data[k] == 0)

    def test_value_range_rescales(self):
        f = lift_scalar_image(np.array([[0.0, 1.0]]), 0, value_range=(-1.0, 5.0))
        assert np.allclose(f.data[0][:, 0, 0].real, [-1.0, 5.0])

    def test_voxels_lift_to_l0(self):
        f = lift_scalar_image(np.ones((2, 2, 2)), 1)
        assert f.dim == 3
        assert f.data[1].shape == (8, 3, 1)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidArgumentError):
            lift_scalar_image(np.array([[np.inf]]), 1)


# ---------------------------------------------------------------
# Accion del grupo
# ---------------------------------------------------------------

class TestActGroup:
    def test_identity_is_copy(self, grid_field):
        out = act_group(grid_field, GroupElement.identity(2), INTERP_EXACT)
        assert _max_diff(out, grid_field) == 0.0
        assert out.data[0] is not grid_field.data[0]

    @pytest.mark.parametrize("fixture_name", ["grid_field", "voxel_field"])
    def test_exact_rotations_compose(self, fixture_name, request):
        """g1 . (g2 . f) = (g1 g2) . f en una rejilla centrada."""
        f = request.getfixturevalue(fixture_name)
        rots = lattice_rotations(f.dim)
        g1, g2 = rots[1], rots[-1]
        lhs = act_group(act_group(f, g2, INTERP_EXACT), g1, INTERP_EXACT)
        rhs = act_group(f, se_compose(g1, g2), INTERP_EXACT)
        assert _max_diff(lhs, rhs) <= 1e-12

    def test_exact_rotation_preserves_norm(self, voxel_field):
        for g in lattice_rotations(3):
            assert abs(field_norm(act_group(voxel_field, g, INTERP_EXACT)) - field_norm(voxel_field)) <= 1e-10

    def test_grid_rotation_permutes_sites(self):
        """La irrep trivial solo se permuta bajo una rotacion de la rejilla."""
        img = np.zeros((3, 3))
        img[0, 1] = 1.0
        f = lift_scalar_image(img, 1)
        g = next(r for r in lattice_rotations(2) if not r.is_identity)
        out = act_group(f, g, INTERP_EXACT)
        moved = np.abs(out.data[0][:, 0, 0]).reshape(3, 3)
        assert moved.sum() == 1.0
        assert moved[1, 1] == 0.0
        assert moved[0, 1] == 0.0

    def test_exact_rejects_off_lattice_rotation(self, grid_field):
        with pytest.raises(InvalidArgumentError):
            act_group(grid_field, GroupElement.from_angle(0.3), INTERP_EXACT)

    def test_exact_rejects_fractional_shift(self, grid_field):
        with pytest.raises(InvalidArgumentError):
            act_group(grid_field, GroupElement.from_angle(0.0, (0.5, 0.0)), INTERP_EXACT)

    def test_integer_shift_zero_fills(self):
        f = lift_scalar_image(np.ones((4, 4)), 0)
        out = act_group(f, GroupElement.from_angle(0.0, (1.0, 0.0)), INTERP_EXACT)
        values = out.data[0][:, 0, 0].real.reshape(4, 4)
        assert np.all(values[0] == 0.0)
        assert np.all(values[1:] == 1.0)

    def test_linear_matches_exact_on_lattice(self, grid_field):
        g = lattice_rotations(2)[2]
        exact = act_group(grid_field, g, INTERP_EXACT)
        linear = act_group(grid_field, g, INTERP_LINEAR)
        assert _max_diff(exact, linear) <= 1e-12

    @pytest.mark.parametrize("dim", [2, 3])
    def test_points_compose_exactly(self, dim):
        rng = np.random.default_rng(20 + dim)
        f = FourierField.random(SiteLayout.point_set(rng.normal(size=(6, dim))), 2, 2, rng)
        g1, g2 = random_se_element(dim, rng), random_se_element(dim, rng)
        lhs = act_group(act_group(f, g2), g1)
        rhs = act_group(f, se_compose(g1, g2))
        assert np.allclose(lhs.coordinates(), rhs.coordinates(), atol=1e-12)
        assert _max_diff(lhs, rhs) <= 1e-10

    def test_points_reject_exact_mode(self):
        f = FourierField.zeros(SiteLayout.point_set(np.zeros((2, 2))), 1, 1)
        with pytest.raises(InvalidArgumentError):
            act_group(f, GroupElement.from_angle(1.0), INTERP_EXACT)

    def test_dimension_mismatch(self, grid_field):
        with pytest.raises(InvalidArgumentError):
            act_group(grid_field, GroupElement.identity(3))

    def test_batch_action_matches_per_field(self):
        layout = SiteLayout.grid((3, 3))
        batch = FieldBatch.random(layout, 1, 1, 3, np.random.default_rng(9))
        g = lattice_rotations(2)[1]
        out = act_group(batch, g, INTERP_EXACT)
        single = act_group(batch.field(2), g, INTERP_EXACT)
        assert _max_diff(out.field(2), single) == 0.0


# ---------------------------------------------------------------
# STFL
# ---------------------------------------------------------------

class TestFieldFormat:
    def test_file_round_trip_is_bitwise(self, tmp_path, voxel_field):
        path = write_field(voxel_field, tmp_path / "f.stfl")
        back = read_field(path)
        assert back.layout.same_as(voxel_field.layout)
        assert back.cutoff == voxel_field.cutoff and back.channels == voxel_field.channels
        for k in voxel_field.irreps:
            assert back.data[k].tobytes() == voxel_field.data[k].tobytes()

    def test_point_set_round_trip(self):
        rng = np.random.default_rng(4)
        f = FourierField.random(SiteLayout.point_set(rng.normal(size=(5, 3))), 2, 1, rng)
        back = decode_field(encode_field(f))
        assert np.array_equal(back.coordinates(), f.coordinates())
        assert _max_diff(back, f) == 0.0

    def test_bad_magic(self, grid_field):
        buf = b"NOPE" + encode_field(grid_field)[4:]
        with pytest.raises(MagicMismatchError) as exc:
            decode_field(buf)
        assert exc.value.field_name == "magic"

    def test_bad_version(self, grid_field):
        buf = bytearray(encode_field(grid_field))
        buf[4:6] = struct.pack("<H", 99)
        with pytest.raises(VersionMismatchError) as exc:
            decode_field(bytes(buf))
        assert exc.value.actual == 99

    def test_truncated_payload(self, grid_field):
        with pytest.raises(TruncatedPayloadError) as exc:
            decode_field(encode_field(grid_field)[:-1])
        assert exc.value.field_name == "payload"

    def test_truncated_header(self, grid_field):
        with pytest.raises(TruncatedPayloadError) as exc:
            decode_field(encode_field(grid_field)[:8])
        assert exc.value.field_name == "header"

    def test_trailing_bytes(self, grid_field):
        with pytest.raises(FieldFormatError) as exc:
            decode_field(encode_field(grid_field) + b"\x00")
        assert not isinstance(exc.value, TruncatedPayloadError)
