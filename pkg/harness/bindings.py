"""
harness/bindings.py -- Enlaces de auditoria para cada tipo de capa de campos.

Cada fabrica recibe (dim, cutoff, seed) y devuelve un AuditTarget con la capa
construida, sus parametros aleatorios y un generador de entradas. Las capas
que requieren rejilla solo admiten el modo grid-exact.

layer_target() es la pieza comun y tambien se usa desde los tests para
auditar variantes (modos de mezcla, softmax literal, etc.).
"""
from typing import Callable, Optional

import numpy as np
from loguru import logger

from core.field import FieldBatch, FourierField, SiteLayout
from harness.audit import MODE_GRID, MODE_POINTS, AuditReport, AuditTarget, audit_equivariance
from layers import LAYERS, FieldSpec, ForwardContext, VectorSpec
from training.params import ParamStore

POINT_SITES = 12
POINT_SCALE = 1.0


def _point_layout(rng: np.random.Generator, dim: int, num_sites: int) -> SiteLayout:
    return SiteLayout.point_set(rng.normal(0.0, POINT_SCALE, size=(num_sites, dim)))


def _randomize(store: ParamStore, rng: np.random.Generator):
    """Sesgos y estadisticas no triviales para que las compuertas varien."""
    for entry in store.slices():
        local = entry.name.rsplit(".", 1)[-1]
        if local == "bias" and entry.kind == "real":
            store.set(entry.name, rng.normal(0.0, 0.5, size=entry.shape))
        elif local == "running_ms":
            store.set(entry.name, rng.uniform(0.5, 2.0, size=entry.shape))
        elif local == "log_gain":
            store.set(entry.name, rng.normal(0.0, 0.2, size=entry.shape))


def layer_target(layer_type: str, dim: int, cutoff: int, seed: int = 0, channels: int = 4,
                 grid_size: Optional[int] = None, num_sites: int = POINT_SITES, trivial_input: bool = False,
                 **kwargs) -> AuditTarget:
    """
    Construye la capa con parametros aleatorios sembrados.

    grid_size=None audita sobre nubes de puntos (y sobre rejillas de 6 si la capa
    las admite); un entero fija una rejilla de ese lado y solo modo grid-exact.
    """
    rng = np.random.default_rng(seed)
    layer = LAYERS.create(layer_type, layer_type, **kwargs)
    on_grid = grid_size is not None
    size = grid_size if on_grid else 6
    shape = (size,) * dim
    layer.build(FieldSpec(dim, cutoff, channels, "grid", shape))
    store = ParamStore()
    layer.register(store, rng)
    _randomize(store, rng)
    ctx = ForwardContext(train=False)

    def make_input(input_rng, mode):
        layout = SiteLayout.grid(shape) if mode == MODE_GRID else _point_layout(input_rng, dim, num_sites)
        f = FourierField.random(layout, cutoff, channels, input_rng)
        if trivial_input:
            f = f.with_data({k: (v if k == 0 else np.zeros_like(v)) for k, v in f.data.items()})
        return f

    def run(f: FourierField):
        y, _ = layer.forward(store, FieldBatch.from_fields([f]), ctx)
        return y[0] if isinstance(y, np.ndarray) else y.field(0)

    invariant = isinstance(layer.output_spec(layer.input_spec), VectorSpec)
    modes = (MODE_GRID,) if on_grid else (MODE_POINTS, MODE_GRID)
    return AuditTarget(layer_type, dim, run, make_input, modes=modes, invariant=invariant)


# ---------------------------------------------------------------------------
# Enlaces por tipo
# ---------------------------------------------------------------------------

def _grid_side(dim: int, even: bool = False) -> int:
    if dim == 2:
        return 8
    return 4 if even else 5


@LAYERS.bind_audit("conv_type1")
def _audit_conv_type1(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("conv_type1", dim, cutoff, seed, channels=1, grid_size=_grid_side(dim),
                        trivial_input=True, out_channels=3, kernel_size=3)


@LAYERS.bind_audit("conv_type2")
def _audit_conv_type2(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("conv_type2", dim, cutoff, seed, channels=2, grid_size=_grid_side(dim),
                        out_channels=3, kernel_size=3)


@LAYERS.bind_audit("avg_pool")
def _audit_avg_pool(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("avg_pool", dim, cutoff, seed, grid_size=_grid_side(dim, even=True), stride=2)


@LAYERS.bind_audit("steerable_batch_norm")
def _audit_batch_norm(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("steerable_batch_norm", dim, cutoff, seed, grid_size=_grid_side(dim))


@LAYERS.bind_audit("harmonic_nonlinearity")
def _audit_harmonic(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("harmonic_nonlinearity", dim, cutoff, seed)


@LAYERS.bind_audit("cg_nonlinearity")
def _audit_cg(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("cg_nonlinearity", dim, cutoff, seed)


@LAYERS.bind_audit("steerable_layer_norm")
def _audit_layer_norm(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("steerable_layer_norm", dim, cutoff, seed)


@LAYERS.bind_audit("norm_flatten")
def _audit_norm_flatten(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("norm_flatten", dim, cutoff, seed, grid_size=1)


@LAYERS.bind_audit("steerable_self_attention")
def _audit_attention(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("steerable_self_attention", dim, cutoff, seed, heads=2)


@LAYERS.bind_audit("position_ffn")
def _audit_ffn(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("position_ffn", dim, cutoff, seed)


@LAYERS.bind_audit("encoder_block")
def _audit_encoder(dim: int, cutoff: int, seed: int = 0) -> AuditTarget:
    return layer_target("encoder_block", dim, cutoff, seed, heads=2)


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

def audit_all_layers(dim: int, cutoff: int, num_group_samples: int = 20, tolerance: float = 1e-9,
                     seed: int = 0, layer_types: Optional[list[str]] = None,
                     on_report: Optional[Callable[[AuditReport], None]] = None) -> list[AuditReport]:
    """Audita cada tipo de capa registrado en todos sus modos."""
    LAYERS.check_audit_coverage()
    reports = []
    for layer_type in layer_types or LAYERS.audited_types():
        target = LAYERS.audit_binding(layer_type)(dim, cutoff, seed)
        for mode in target.modes:
            report = audit_equivariance(target, num_group_samples, tolerance, mode, seed)
            reports.append(report)
            if on_report is not None:
                on_report(report)
    failed = [r.name for r in reports if not r.passed]
    logger.info(f"[AUDIT] {len(reports)} auditorias de capa, {len(failed)} fallidas {failed or ''}")
    return reports
