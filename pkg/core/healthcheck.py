"""
core/healthcheck.py -- Verificacion del entorno antes de entrenar o evaluar.

Dos niveles:
  - critical: bloquea train/eval (paquetes del stack numerico, float64/complex128,
    archivos IDX declarados en la configuracion).
  - warnings: informativo (directorios que se crearan, hypothesis ausente).

    issues = run_healthcheck(config, out_dir)
    if issues["critical"]: ...
"""
import importlib
from pathlib import Path
from typing import Optional, Union

from loguru import logger

# (modulo importable, paquete en requirements.txt)
REQUIRED_MODULES = (
    ("numpy", "numpy"),
    ("yaml", "pyyaml"),
    ("dotenv", "python-dotenv"),
    ("loguru", "loguru"),
    ("rich", "rich"),
)
OPTIONAL_MODULES = (("hypothesis", "tests de propiedades"),)


def run_healthcheck(config=None, out_dir: Optional[Union[str, Path]] = None) -> dict:
    """
    Corre las verificaciones de entorno y, con config, las del experimento.

    Returns:
        {"critical": [...], "warnings": [...]} con mensajes legibles.
    """
    issues = {"critical": [], "warnings": []}
    _check_modules(issues)
    _check_numeric_types(issues)
    if config is not None:
        _check_dataset(config, issues)
        _check_directories(config, out_dir, issues)

    for msg in issues["critical"]:
        logger.error(f"[HEALTHCHECK] {msg}")
    for msg in issues["warnings"]:
        logger.warning(f"[HEALTHCHECK] {msg}")
    if not any(issues.values()):
        logger.info("[HEALTHCHECK] Entorno listo.")
    return issues


def _importable(module: str) -> bool:
    try:
        importlib.import_module(module)
    except ImportError:
        return False
    return True


def _check_modules(issues: dict):
    for module, package in REQUIRED_MODULES:
        if not _importable(module):
            issues["critical"].append(f"Falta el paquete {package} (import {module})")
    for module, purpose in OPTIONAL_MODULES:
        if not _importable(module):
            issues["warnings"].append(f"{module} no instalado: se omiten los {purpose}")


def _check_numeric_types(issues: dict):
    if not _importable("numpy"):
        return
    import numpy as np

    if np.finfo(np.float64).eps > 1e-15:
        issues["critical"].append("float64 sin precision doble")
    z = np.array([1 + 1j], dtype=np.complex128)
    if z.itemsize != 16 or not np.isclose((z * z.conj()).real[0], 2.0):
        issues["critical"].append("complex128 no disponible o incorrecto")


def _check_dataset(config, issues: dict):
    if config.dataset.kind != "idx":
        return
    for name, path in config.dataset.idx_paths().items():
        if not path.exists():
            issues["critical"].append(f"dataset.{name}: no existe {path}")


def _check_directories(config, out_dir, issues: dict):
    for label, path in (("salida", out_dir), ("logs", config.logging.log_dir)):
        if path is not None and not Path(path).exists():
            issues["warnings"].append(f"El directorio de {label} {path} no existe; se creara")
