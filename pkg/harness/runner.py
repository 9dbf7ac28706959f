"""
harness/runner.py -- Entrenamiento, evaluacion y generacion de datos.

run_training escribe por epoca una fila de metrics.csv y un checkpoint
last.stck con parametros, momentos de Adam, epoca, estado del RNG e historial;
al terminar escribe final.stck. Con resume=True se restaura last.stck y el
entrenamiento sigue de forma bit-identica a una corrida sin interrumpir.

run_eval reporta la precision sobre el conjunto de prueba tal cual, bajo
rotaciones aleatorias de la rejilla (media y dispersion) y con logits
promediados sobre rotaciones de la rejilla (test-time augmentation).
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from loguru import logger

from core.config import ExperimentConfig
from core.errors import CheckpointError, DatasetError
from core.field import INTERP_EXACT, act_group
from core.group_math import lattice_rotations, random_lattice_element
from layers.registry import ForwardContext
from training.data import Batch, lift_images, load_idx, render_rotated_shapes, write_idx
from training.model import ModelSpec, build_model, forward, forward_backward
from training.optim import adam_step, lr_at
from training.params import ParamStore

METRICS_HEADER = ["epoch", "loss", "train_accuracy", "test_accuracy", "lr"]
LAST_CHECKPOINT = "last.stck"
FINAL_CHECKPOINT = "final.stck"
METRICS_FILE = "metrics.csv"
EVAL_CHUNK = 64


@dataclass
class TrainingResult:
    """Salida de run_training."""
    history: list[dict]
    checkpoint: Path
    metrics_path: Path
    model: ModelSpec
    params: ParamStore

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}


@dataclass
class EvalResult:
    """Precisiones de run_eval (fracciones en [0, 1])."""
    accuracy: float
    rotated_mean: float
    rotated_std: float
    tta_accuracy: float
    rotated: list[float] = field(default_factory=list)
    num_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "rotated_mean": self.rotated_mean,
            "rotated_std": self.rotated_std,
            "tta_accuracy": self.tta_accuracy,
            "rotated": list(self.rotated),
            "num_samples": self.num_samples,
        }


# ---------------------------------------------------------------------------
# Datos
# ---------------------------------------------------------------------------

def _value_range(config: ExperimentConfig):
    vr = config.dataset.value_range
    return tuple(vr) if vr is not None else None


def load_datasets(config: ExperimentConfig) -> tuple[Batch, Batch]:
    """(train, test) sinteticos sembrados con config.seed, o leidos de IDX."""
    ds = config.dataset
    cutoff = config.model.cutoff
    if ds.kind == "idx":
        paths = ds.idx_paths()
        train = load_idx(paths["train_images"], paths["train_labels"], cutoff, ds.num_classes, _value_range(config))
        test = load_idx(paths["test_images"], paths["test_labels"], cutoff, ds.num_classes, _value_range(config))
        expected = (ds.size,) * config.dimension
        for name, batch in (("train", train), ("test", test)):
            if batch.fields.layout.shape != expected:
                raise DatasetError(
                    f"Imagenes {name} de forma {batch.fields.layout.shape}, la configuracion declara {expected}"
                )
        return train, test
    rng = np.random.default_rng(config.seed)
    train_images, train_labels = render_rotated_shapes(ds.num_train, ds.size, ds.num_classes, rng,
                                                       dim=config.dimension)
    test_images, test_labels = render_rotated_shapes(ds.num_test, ds.size, ds.num_classes, rng,
                                                     dim=config.dimension)
    logger.info(f"[DATA] Glifos sinteticos: {ds.num_train} entrenamiento / {ds.num_test} prueba")
    return (lift_images(train_images, train_labels, cutoff, ds.num_classes, _value_range(config)),
            lift_images(test_images, test_labels, cutoff, ds.num_classes, _value_range(config)))


def run_gen_data(config: ExperimentConfig, out_dir: Union[str, Path]) -> dict[str, Path]:
    """Escribe el dataset sintetico como cuatro archivos IDX."""
    ds = config.dataset
    out_dir = Path(out_dir)
    rng = np.random.default_rng(config.seed)
    suffix = "idx3" if config.dimension == 2 else "idx4"
    written = {}
    for split, n in (("train", ds.num_train), ("test", ds.num_test)):
        images, labels = render_rotated_shapes(n, ds.size, ds.num_classes, rng, dim=config.dimension)
        img_path, lbl_path = write_idx(images, labels, out_dir / f"{split}-images-{suffix}-ubyte",
                                       out_dir / f"{split}-labels-idx1-ubyte")
        written[f"{split}_images"] = img_path
        written[f"{split}_labels"] = lbl_path
    return written


# ---------------------------------------------------------------------------
# Evaluacion
# ---------------------------------------------------------------------------

def evaluate_logits(model: ModelSpec, params: ParamStore, batch: Batch, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Logits en modo evaluacion, por trozos para acotar memoria."""
    ctx = ForwardContext(train=False)
    parts = []
    for start in range(0, len(batch), chunk):
        idx = np.arange(start, min(start + chunk, len(batch)))
        logits, _ = forward(model, params, batch.fields.subset(idx), ctx=ctx)
        parts.append(logits)
    return np.concatenate(parts, axis=0)


def evaluate_accuracy(model: ModelSpec, params: ParamStore, batch: Batch) -> float:
    logits = evaluate_logits(model, params, batch)
    return float(np.mean(np.argmax(logits, axis=1) == batch.labels))


def _rotated(batch: Batch, g) -> Batch:
    return Batch(act_group(batch.fields, g, INTERP_EXACT), batch.labels, batch.num_classes)


def run_eval(config: ExperimentConfig, checkpoint: Union[str, Path],
             test: Optional[Batch] = None) -> EvalResult:
    """Precision plana, bajo rotaciones aleatorias de la rejilla y con TTA."""
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise CheckpointError(f"No existe el checkpoint: {checkpoint}")
    model = build_model(config)
    params = model.init_params(config.seed)
    params.restore(checkpoint)
    if test is None:
        _, test = load_datasets(config)

    accuracy = evaluate_accuracy(model, params, test)
    rng = np.random.default_rng(config.seed + 1)
    rotated = []
    for _ in range(config.eval.test_rotations):
        g = random_lattice_element(config.dimension, rng)
        rotated.append(evaluate_accuracy(model, params, _rotated(test, g)))

    rotations = lattice_rotations(config.dimension)[:config.eval.tta_rotations]
    logits = sum(evaluate_logits(model, params, _rotated(test, g)) for g in rotations) / len(rotations)
    tta = float(np.mean(np.argmax(logits, axis=1) == test.labels))

    result = EvalResult(accuracy, float(np.mean(rotated)), float(np.std(rotated)), tta, rotated, len(test))
    logger.info(
        f"[TRAIN] Evaluacion: plana={accuracy:.4f} rotada={result.rotated_mean:.4f}"
        f"+-{result.rotated_std:.4f} TTA({len(rotations)})={tta:.4f}"
    )
    return result


# ---------------------------------------------------------------------------
# Entrenamiento
# ---------------------------------------------------------------------------

def _write_metrics(path: Path, history: list[dict]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in METRICS_HEADER[1:]])


def _resume_state(params: ParamStore, config: ExperimentConfig, path: Path,
                  rng: np.random.Generator) -> tuple[int, list[dict]]:
    if not path.exists():
        raise CheckpointError(f"--resume sin checkpoint previo en {path}")
    extra = params.restore(path)
    for key in ("epoch", "rng_state", "history"):
        if key not in extra:
            raise CheckpointError(f"Checkpoint {path} sin '{key}': no es un checkpoint de entrenamiento")
    if extra.get("config") not in (None, config.to_dict()):
        logger.warning("[TRAIN] La configuracion difiere de la del checkpoint; la reanudacion no sera identica")
    rng.bit_generator.state = extra["rng_state"]
    logger.info(f"[TRAIN] Reanudando tras la epoca {extra['epoch']} desde {path}")
    return int(extra["epoch"]), list(extra["history"])


def run_training(config: ExperimentConfig, out_dir: Union[str, Path], resume: bool = False,
                 data: Optional[tuple[Batch, Batch]] = None) -> TrainingResult:
    """
    Entrena con Adam y el calendario escalonado.

    Args:
        config: Experimento validado.
        out_dir: Directorio de metricas y checkpoints.
        resume: Continua desde out_dir/last.stck.
        data: (train, test) ya cargados; si es None se usa load_datasets.

    Returns:
        TrainingResult con el historial por epoca y la ruta de final.stck.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt = config.optimizer
    model = build_model(config)
    params = model.init_params(config.seed)
    train, test = data if data is not None else load_datasets(config)
    rng = np.random.default_rng(config.seed + 1)

    start, history = 0, []
    if resume:
        start, history = _resume_state(params, config, out_dir / LAST_CHECKPOINT, rng)

    metrics_path = out_dir / METRICS_FILE
    logger.info(f"[TRAIN] {params.num_trainable()} parametros entrenables, {opt.epochs} epocas, lote {opt.batch_size}")
    for epoch in range(start, opt.epochs):
        lr = lr_at(epoch, opt.lr, opt.decay_factor, opt.decay_every)
        losses, correct, seen = [], 0, 0
        for batch in train.minibatches(opt.batch_size, rng):
            ctx = ForwardContext(train=True, rng=rng, dropout=True, update_stats=True)
            loss, logits = forward_backward(model, params, batch, ctx)
            adam_step(params, lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay)
            losses.append(loss * len(batch))
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
            seen += len(batch)
            logger.debug(f"[TRAIN] epoca {epoch + 1} lote: perdida={loss:.4f}")
        row = {
            "epoch": epoch + 1,
            "loss": float(np.sum(losses) / max(seen, 1)),
            "train_accuracy": correct / max(seen, 1),
            "test_accuracy": evaluate_accuracy(model, params, test),
            "lr": lr,
        }
        history.append(row)
        _write_metrics(metrics_path, history)
        params.save_checkpoint(out_dir / LAST_CHECKPOINT, {
            "epoch": epoch + 1,
            "rng_state": rng.bit_generator.state,
            "history": history,
            "config": config.to_dict(),
        })
        logger.info(
            f"[TRAIN] Epoca {epoch + 1}/{opt.epochs}: perdida={row['loss']:.4f} "
            f"train={row['train_accuracy']:.3f} test={row['test_accuracy']:.3f} lr={lr:.2e}"
        )

    if not history:
        _write_metrics(metrics_path, history)
    final = params.save_checkpoint(out_dir / FINAL_CHECKPOINT, {
        "epoch": opt.epochs,
        "history": history,
        "config": config.to_dict(),
    })
    return TrainingResult(history, final, metrics_path, model, params)
