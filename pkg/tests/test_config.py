"""
tests/test_config.py -- Tests de carga y validacion de la configuracion.

Verifica:
  - settings.yaml y todos los presets cargan y validan.
  - Claves desconocidas y tipos incorrectos se reportan con su ruta.
  - Variables de entorno ${VAR} y replace con claves punteadas.
  - Ida y vuelta por save_config.
"""
import sys
import os
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ["LOGURU_LEVEL"] = "ERROR"
from loguru import logger
logger.remove()

from core.config import DEFAULT_CONFIG_PATH, ExperimentConfig, load_config, resolve_env_vars, save_config
from core.errors import ConfigError

PRESETS = sorted((Path(__file__).parent.parent / "config" / "experiments").glob("*.yaml"))


class TestLoading:
    def test_default_settings(self):
        config = load_config(DEFAULT_CONFIG_PATH)
        assert config.dimension == 2
        assert config.model.mixing_w1 == "shared-scalar"
        assert config.audit.tolerance == 1e-9

    @pytest.mark.parametrize("path", PRESETS, ids=lambda p: p.stem)
    def test_presets_load(self, path):
        assert isinstance(load_config(path), ExperimentConfig)

    def test_presets_build_models(self):
        from training.model import build_model

        for path in PRESETS:
            build_model(load_config(path))

    def test_round_trip(self, tmp_path):
        config = load_config(DEFAULT_CONFIG_PATH).replace(**{"model.heads": 4, "seed": 9})
        back = load_config(save_config(config, tmp_path / "c.yaml"))
        assert back == config

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("model: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)


class TestValidation:
    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"model": {"cutof": 2}})
        assert exc.value.field == "model.cutof"

    def test_wrong_type(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict({"optimizer": {"epochs": "ten"}})
        assert exc.value.field == "optimizer.epochs"

    def test_bool_is_not_int(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seed": True})

    def test_int_accepted_as_float(self):
        assert ExperimentConfig.from_dict({"optimizer": {"lr": 1}}).optimizer.lr == 1.0

    @pytest.mark.parametrize("data,field", [
        ({"dimension": 4}, "dimension"),
        ({"model": {"d_model": 6, "heads": 4}}, "model.heads"),
        ({"model": {"mixing_w2": "diagonal"}}, "model.mixing_w2"),
        ({"model": {"kernel_size": 4}}, "model.kernel_size"),
        ({"dataset": {"kind": "idx"}}, "dataset.train_images"),
        ({"audit": {"tolerance": 0.0}}, "audit.tolerance"),
        ({"logging": {"level": "LOUD"}}, "logging.level"),
    ])
    def test_semantic_errors(self, data, field):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(data)
        assert exc.value.field == field

    def test_replace_validates(self):
        config = ExperimentConfig.from_dict({})
        with pytest.raises(ConfigError):
            config.replace(**{"model.dropout": 1.5})


class TestEnvironment:
    def test_env_var_substitution(self, monkeypatch):
        monkeypatch.setenv("STEERKIT_TEST_LEVEL", "DEBUG")
        resolved = resolve_env_vars({"logging": {"level": "${STEERKIT_TEST_LEVEL}"}, "xs": ["${STEERKIT_TEST_LEVEL}"]})
        assert resolved == {"logging": {"level": "DEBUG"}, "xs": ["DEBUG"]}

    def test_missing_env_var_becomes_none(self, monkeypatch):
        monkeypatch.delenv("STEERKIT_TEST_UNSET", raising=False)
        assert resolve_env_vars("${STEERKIT_TEST_UNSET}") is None
