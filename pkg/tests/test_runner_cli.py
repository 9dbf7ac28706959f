"""
tests/test_runner_cli.py -- Tests del runner de entrenamiento y de la CLI steerkit.

Verifica:
  - train escribe metrics.csv, last.stck y final.stck.
  - Reanudar desde last.stck reproduce el historial sin interrupcion.
  - eval, gen-data y attnmap producen sus archivos.
  - Codigos de salida: 0 exito, 1 auditoria fallida, 2 error.
"""
import sys
import os
import csv
import json
from pathlib import Path

import pytest
import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ["LOGURU_LEVEL"] = "ERROR"
from loguru import logger
logger.remove()

import main as cli
from core.config import load_config, save_config
from harness.runner import (
    FINAL_CHECKPOINT,
    LAST_CHECKPOINT,
    METRICS_FILE,
    METRICS_HEADER,
    run_eval,
    run_training,
)

MICRO = Path(__file__).parent.parent / "config" / "experiments" / "micro.yaml"


@pytest.fixture
def tiny_config(tmp_path):
    return load_config(MICRO).replace(**{
        "dataset.num_train": 8,
        "dataset.num_test": 4,
        "optimizer.epochs": 2,
        "optimizer.batch_size": 4,
        "logging.level": "ERROR",
        "logging.log_dir": str(tmp_path / "logs"),
    })


@pytest.fixture
def config_path(tiny_config, tmp_path):
    return str(save_config(tiny_config, tmp_path / "tiny.yaml"))


@pytest.fixture(autouse=True)
def _reset_logger():
    yield
    logger.remove()


def _run(*argv) -> int:
    return cli.main([str(a) for a in argv] + ["--log-level", "ERROR"])


# ---------------------------------------------------------------
# Runner
# ---------------------------------------------------------------

class TestTraining:
    def test_outputs(self, tiny_config, tmp_path):
        result = run_training(tiny_config, tmp_path / "run")
        assert len(result.history) == 2
        assert (tmp_path / "run" / LAST_CHECKPOINT).exists()
        assert result.checkpoint == tmp_path / "run" / FINAL_CHECKPOINT
        with open(result.metrics_path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == METRICS_HEADER
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        assert all(np.isfinite(float(v)) for r in rows[1:] for v in r)

    def test_resume_matches_uninterrupted(self, tiny_config, tmp_path):
        full = run_training(tiny_config, tmp_path / "full")
        run_training(tiny_config.replace(**{"optimizer.epochs": 1}), tmp_path / "split")
        resumed = run_training(tiny_config, tmp_path / "split", resume=True)
        assert resumed.history == full.history
        assert np.array_equal(resumed.params.theta, full.params.theta)
        assert (tmp_path / "split" / METRICS_FILE).read_text() == (tmp_path / "full" / METRICS_FILE).read_text()

    def test_resume_requires_checkpoint(self, tiny_config, tmp_path):
        from core.errors import CheckpointError

        with pytest.raises(CheckpointError):
            run_training(tiny_config, tmp_path / "empty", resume=True)

    def test_same_seed_same_history(self, tiny_config, tmp_path):
        a = run_training(tiny_config.replace(**{"optimizer.epochs": 1}), tmp_path / "a")
        b = run_training(tiny_config.replace(**{"optimizer.epochs": 1}), tmp_path / "b")
        assert a.history == b.history


class TestEvaluation:
    def test_eval_fractions(self, tiny_config, tmp_path):
        result = run_training(tiny_config.replace(**{"optimizer.epochs": 1}), tmp_path / "run")
        ev = run_eval(tiny_config, result.checkpoint)
        assert ev.num_samples == 4
        assert len(ev.rotated) == tiny_config.eval.test_rotations
        for value in [ev.accuracy, ev.rotated_mean, ev.tta_accuracy]:
            assert 0.0 <= value <= 1.0

    def test_missing_checkpoint(self, tiny_config, tmp_path):
        from core.errors import CheckpointError

        with pytest.raises(CheckpointError):
            run_eval(tiny_config, tmp_path / "none.stck")


class TestAttentionMaps:
    @staticmethod
    def _sample(config):
        from training.data import make_synthetic_rotated_shapes

        return make_synthetic_rotated_shapes(1, config.dataset.size, 2, rng=3,
                                             cutoff=config.model.cutoff).fields.field(0)

    def test_maps_follow_grid_rotation(self, tiny_config):
        """Rotar la entrada 90 grados mueve el valor del sitio x al sitio R x."""
        from core.field import INTERP_EXACT, act_group
        from core.group_math import lattice_rotations, se_apply
        from harness.attention_maps import attention_map, compute_attention_maps
        from training.model import build_model

        model = build_model(tiny_config)
        params = model.init_params(0)
        sample = self._sample(tiny_config)
        g = lattice_rotations(2)[1]
        _, alpha, layout = compute_attention_maps(model, params, sample)
        _, alpha_rot, layout_rot = compute_attention_maps(model, params, act_group(sample, g, INTERP_EXACT))
        assert layout_rot.shape == layout.shape

        coords = layout.coordinates()
        moved = se_apply(g, coords)
        dist = np.abs(moved[:, None, :] - coords[None, :, :]).max(axis=-1)
        perm = dist.argmin(axis=1)
        assert np.all(dist[np.arange(len(coords)), perm] < 1e-9)
        assert sorted(perm) == list(range(len(coords)))

        for head in range(alpha.shape[1]):
            a, b = attention_map(alpha, head), attention_map(alpha_rot, head)
            assert np.allclose(b[perm], a, atol=1e-10)

    def test_map_reads_trivial_irrep(self, tiny_config, tmp_path):
        """Con mezcla identity cada irrep tiene sus propios pesos; el mapa usa k = 0."""
        from harness.attention_maps import attention_map, compute_attention_maps, export_attention_maps
        from training.model import build_model

        config = tiny_config.replace(**{"model.mixing_w1": "identity"})
        model = build_model(config)
        params = model.init_params(0)
        sample = self._sample(config)
        _, alpha, _ = compute_attention_maps(model, params, sample)
        cutoff = config.model.cutoff
        assert alpha.shape[2] == 2 * cutoff + 1

        for head in range(alpha.shape[1]):
            expected = alpha[0, head, cutoff].max(axis=-1)
            assert np.array_equal(attention_map(alpha, head, dim=2), expected)
            assert np.array_equal(attention_map(alpha, head, dim=2, irrep_position=0),
                                  alpha[0, head, 0].max(axis=-1))

        export_attention_maps(model, params, sample, [0], tmp_path)
        with open(tmp_path / "head0.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        written = np.array([float(r["max_attention"]) for r in rows])
        assert np.array_equal(written, alpha[0, 0, cutoff].max(axis=-1))


# ---------------------------------------------------------------
# CLI
# ---------------------------------------------------------------

class TestCli:
    def test_train_then_eval(self, config_path, tmp_path):
        out = tmp_path / "run"
        assert _run("train", "--config", config_path, "--out", out) == cli.EXIT_OK
        assert (out / FINAL_CHECKPOINT).exists()
        assert _run("eval", "--config", config_path, "--out", out,
                    "--checkpoint", out / FINAL_CHECKPOINT) == cli.EXIT_OK
        data = json.loads((out / "eval.json").read_text())
        assert set(data) >= {"accuracy", "rotated_mean", "rotated_std", "tta_accuracy"}

    def test_eval_missing_checkpoint_is_error(self, config_path, tmp_path):
        code = _run("eval", "--config", config_path, "--out", tmp_path, "--checkpoint", tmp_path / "x.stck")
        assert code == cli.EXIT_ERROR

    def test_gen_data(self, config_path, tmp_path):
        from training.data import read_idx_arrays

        out = tmp_path / "data"
        assert _run("gen-data", "--config", config_path, "--out", out) == cli.EXIT_OK
        images, labels = read_idx_arrays(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte")
        assert images.shape == (8, 14, 14)
        assert (out / "test-labels-idx1-ubyte").exists()

    def test_attnmap(self, config_path, tmp_path):
        out = tmp_path / "maps"
        assert _run("attnmap", "--config", config_path, "--out", out, "--rotate", 1) == cli.EXIT_OK
        assert (out / "head0.csv").exists() and (out / "head1.stfl").exists()

    def test_attnmap_rotation_out_of_range(self, config_path, tmp_path):
        assert _run("attnmap", "--config", config_path, "--out", tmp_path, "--rotate", 99) == cli.EXIT_ERROR

    def test_audit_equiv_passes(self, config_path, tmp_path):
        code = _run("audit-equiv", "--config", config_path, "--out", tmp_path,
                    "--layer", "avg_pool", "--layer", "norm_flatten")
        assert code == cli.EXIT_OK
        reports = json.loads((tmp_path / "audit_equiv.json").read_text())
        assert {r["name"] for r in reports} == {"avg_pool", "norm_flatten"}

    def test_audit_equiv_failure_exit_code(self, tiny_config, tmp_path):
        strict = save_config(tiny_config.replace(**{"audit.tolerance": 1e-300}), tmp_path / "strict.yaml")
        code = _run("audit-equiv", "--config", strict, "--out", tmp_path, "--layer", "steerable_self_attention")
        assert code == cli.EXIT_AUDIT_FAILED

    def test_audit_grad(self, config_path, tmp_path):
        code = _run("audit-grad", "--config", config_path, "--out", tmp_path, "--coordinates", 10)
        assert code == cli.EXIT_OK
        assert json.loads((tmp_path / "audit_grad.json").read_text())["num_entries"] == 10

    def test_unknown_config_key(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("dimension: 2\nmodel:\n  cutof: 2\n", encoding="utf-8")
        assert _run("train", "--config", bad, "--out", tmp_path) == cli.EXIT_ERROR

    def test_missing_config(self, tmp_path):
        assert _run("train", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == cli.EXIT_ERROR

    def test_unknown_verb(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["fly"])
        assert exc.value.code == 2


# ---------------------------------------------------------------
# Regresiones lentas (STEERKIT_SLOW=1)
# ---------------------------------------------------------------

@pytest.mark.skipif(os.getenv("STEERKIT_SLOW") != "1", reason="regresion lenta: exportar STEERKIT_SLOW=1")
class TestSlow:
    def test_overfit_one_batch(self, tmp_path):
        """200 pasos de Adam sobre 64 muestras bajan la perdida de 0.1 ln(clases)."""
        import math

        config = load_config(MICRO.parent / "overfit.yaml")
        result = run_training(config, tmp_path / "overfit")
        assert len(result.history) == 200
        assert result.final["loss"] < 0.1 * math.log(config.dataset.num_classes)

    def test_rotated_eval_matches_plain(self, tmp_path):
        config = load_config(MICRO.parent / "overfit.yaml").replace(**{"optimizer.epochs": 40})
        result = run_training(config, tmp_path / "run")
        ev = run_eval(config, result.checkpoint)
        assert abs(ev.rotated_mean - ev.accuracy) <= 0.01
