"""
harness/audit.py -- Auditorias de equivarianza y de gradientes.

Equivarianza: para elementos g Haar-aleatorios (nubes de puntos) o de la rejilla
(modo grid-exact) se mide, por irrep,

    err = || L(g.f) - g.L(f) ||_rho / (|| L(f) || + 1e-12)

y el objetivo pasa si el maximo no supera la tolerancia. Objetivos invariantes
(salida vectorial) comparan L(g.f) con L(f).

Gradientes: diferencias centrales sobre cada coordenada entrenable (o un
subconjunto sembrado), con dropout apagado, estadisticas congeladas y las
compuertas ReLU fijadas en el punto base.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError, NumericError
from core.field import (
    INTERP_EXACT,
    INTERP_LINEAR,
    FieldBatch,
    FourierField,
    SiteLayout,
    act_group,
    lift_scalar_image,
)
from core.group_math import GroupElement, random_lattice_element, random_se_element
from layers.registry import ForwardContext
from training.data import Batch
from training.model import ModelSpec, cross_entropy, forward, forward_backward
from training.params import ParamStore

MODE_POINTS = "point-set"
MODE_GRID = "grid-exact"
AUDIT_MODES = (MODE_POINTS, MODE_GRID)
NORM_EPS = 1e-12
GRAD_FLOOR = 1e-4


# ---------------------------------------------------------------------------
# Reportes
# ---------------------------------------------------------------------------

@dataclass
class AuditEntry:
    """Una medicion: objetivo, irrep (None si es invariante), elemento y error."""
    target: str
    irrep: Optional[int]
    element: dict
    error: float
    detail: dict = field(default_factory=dict)


@dataclass
class AuditReport:
    """
    Resultado agregado de una auditoria.

    Atributos:
        name: Objetivo auditado (capa, modelo o "gradients").
        kind: "equivariance" o "gradients".
        mode: Modo de muestreo de grupo o "finite-differences".
        tolerance: Umbral de aprobacion.
        entries: Mediciones individuales.
    """
    name: str
    kind: str
    mode: str
    tolerance: float
    entries: list[AuditEntry] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e.error for e in self.entries), default=0.0)

    @property
    def mean_error(self) -> float:
        return float(np.mean([e.error for e in self.entries])) if self.entries else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    @property
    def worst(self) -> Optional[AuditEntry]:
        return max(self.entries, key=lambda e: e.error) if self.entries else None

    def failures(self) -> list[AuditEntry]:
        return [e for e in self.entries if e.error > self.tolerance]

    def to_dict(self) -> dict:
        worst = self.worst
        return {
            "name": self.name,
            "kind": self.kind,
            "mode": self.mode,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_error": self.max_error,
            "mean_error": self.mean_error,
            "num_entries": len(self.entries),
            "worst": asdict(worst) if worst is not None else None,
            "failures": [asdict(e) for e in self.failures()],
        }

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# Objetivos de equivarianza
# ---------------------------------------------------------------------------

@dataclass
class AuditTarget:
    """
    Algo auditable.

    Atributos:
        name: Nombre que aparece en el reporte.
        dim: 2 o 3.
        run: Campo -> campo (equivariante) o arreglo (invariante).
        make_input: (rng, modo) -> campo de entrada aleatorio.
        modes: Modos soportados.
        invariant: True si run devuelve un arreglo que debe ser invariante.
    """
    name: str
    dim: int
    run: Callable[[Any], Any]
    make_input: Callable[[np.random.Generator, str], Any]
    modes: tuple[str, ...] = AUDIT_MODES
    invariant: bool = False


def _sample_element(dim: int, mode: str, rng: np.random.Generator) -> GroupElement:
    if mode == MODE_GRID:
        return random_lattice_element(dim, rng)
    return random_se_element(dim, rng)


def _relative_errors(lhs, rhs, invariant: bool) -> dict[Optional[int], float]:
    if invariant:
        lhs, rhs = np.asarray(lhs), np.asarray(rhs)
        return {None: float(np.linalg.norm(lhs - rhs) / (np.linalg.norm(rhs) + NORM_EPS))}
    total = float(np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in rhs.data.values())))
    return {k: float(np.linalg.norm(lhs.data[k] - rhs.data[k]) / (total + NORM_EPS)) for k in rhs.irreps}


def audit_equivariance(target: AuditTarget, num_group_samples: int = 20, tolerance: float = 1e-9,
                       mode: str = MODE_POINTS, seed: int = 0) -> AuditReport:
    """Residuo de conmutacion sobre num_group_samples pares (campo, elemento)."""
    if mode not in AUDIT_MODES:
        raise InvalidArgumentError(f"Modo de auditoria desconocido: {mode!r}. Validos: {AUDIT_MODES}")
    if mode not in target.modes:
        raise InvalidArgumentError(f"{target.name} no admite el modo {mode}; admite {target.modes}")
    if num_group_samples < 1:
        raise InvalidArgumentError(f"num_group_samples debe ser >= 1: {num_group_samples}")
    interpolation = INTERP_EXACT if mode == MODE_GRID else INTERP_LINEAR
    rng = np.random.default_rng(seed)
    report = AuditReport(target.name, "equivariance", mode, tolerance)
    for _ in range(num_group_samples):
        f = target.make_input(rng, mode)
        g = _sample_element(target.dim, mode, rng)
        out = target.run(f)
        lhs = target.run(act_group(f, g, interpolation))
        rhs = out if target.invariant else act_group(out, g, interpolation)
        for irrep, err in _relative_errors(lhs, rhs, target.invariant).items():
            report.entries.append(AuditEntry(target.name, irrep, g.to_dict(), err))
    status = "OK" if report.passed else "FALLO"
    logger.info(f"[AUDIT] {target.name} ({mode}): max={report.max_error:.3e} media={report.mean_error:.3e} {status}")
    return report


def identity_target(dim: int, cutoff: int = 2, channels: int = 2, num_points: int = 8) -> AuditTarget:
    """Objetivo identidad: error exactamente cero."""
    def make_input(rng, mode):
        if mode == MODE_GRID:
            return FourierField.random(SiteLayout.grid((6,) * dim), cutoff, channels, rng)
        return FourierField.random(SiteLayout.point_set(rng.normal(size=(num_points, dim))), cutoff, channels, rng)

    return AuditTarget("identity", dim, lambda f: f, make_input)


def model_target(model: ModelSpec, params: ParamStore, batch_size: int = 2) -> AuditTarget:
    """Logits en modo evaluacion bajo rotaciones de la rejilla de entrada."""
    spec = model.input_spec

    def make_input(rng, mode):
        images = rng.uniform(0.0, 1.0, size=(batch_size,) + spec.shape)
        return FieldBatch.from_fields([lift_scalar_image(img, spec.cutoff) for img in images])

    def run(fields):
        logits, _ = forward(model, params, fields, train=False)
        return logits

    return AuditTarget("model", spec.dim, run, make_input, modes=(MODE_GRID,), invariant=True)


# ---------------------------------------------------------------------------
# Gradientes
# ---------------------------------------------------------------------------

def audit_gradients(model: ModelSpec, params: ParamStore, batch: Batch, fd_step: float = 1e-4,
                    tolerance: float = 1e-4, coordinates: Optional[int] = None, seed: int = 0,
                    grad_floor: float = GRAD_FLOOR) -> AuditReport:
    """
    Gradiente analitico contra diferencias centrales.

    err = |a - n| / max(|a|, |n|, grad_floor) por coordenada; coordinates limita
    la comparacion a un subconjunto sembrado.
    """
    if fd_step <= 0 or not np.isfinite(fd_step):
        raise InvalidArgumentError(f"fd_step debe ser > 0: {fd_step}")
    base_ctx = ForwardContext(train=True, dropout=False, update_stats=False)
    buffers_before = params.theta.copy()
    forward_backward(model, params, batch, base_ctx)
    analytic = params.grad.copy()
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError("Gradiente analitico no finito", layer=params.owner_of(bad)[0])
    if not np.array_equal(buffers_before, params.theta):
        raise NumericError("La pasada de auditoria modifico parametros o estadisticas", layer="audit")

    def loss_at() -> float:
        ctx = ForwardContext(train=True, dropout=False, update_stats=False, freeze_gates=True,
                             gates=base_ctx.gates)
        logits, _ = forward(model, params, batch.fields, ctx=ctx)
        return cross_entropy(logits, batch.labels)[0]

    indices = np.flatnonzero(params.trainable_mask())
    if coordinates is not None and coordinates < indices.size:
        indices = np.sort(np.random.default_rng(seed).choice(indices, size=coordinates, replace=False))

    report = AuditReport("gradients", "gradients", "finite-differences", tolerance)
    for idx in indices:
        original = params.theta[idx]
        params.theta[idx] = original + fd_step
        up = loss_at()
        params.theta[idx] = original - fd_step
        down = loss_at()
        params.theta[idx] = original
        numeric = (up - down) / (2.0 * fd_step)
        a = float(analytic[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), grad_floor)
        name, local = params.owner_of(int(idx))
        report.entries.append(AuditEntry(name, None, {"index": int(idx), "local": local}, float(err),
                                         {"analytic": a, "numeric": float(numeric)}))
    params.grad[:] = analytic
    worst = report.worst
    logger.info(
        f"[AUDIT] Gradientes: {len(report.entries)} coordenadas, max={report.max_error:.3e}"
        + (f" en {worst.target}[{worst.element['local']}]" if worst is not None else "")
    )
    return report
