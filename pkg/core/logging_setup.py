"""
core/logging_setup.py -- Sinks de loguru para el CLI.

Se eliminan los handlers por defecto y se configuran:
  1. stderr -- salida coloreada con el nivel pedido.
  2. steerkit.log -- registro general (DEBUG), rotacion cada 10 MB, 30 dias de retencion.
  3. errors.log -- solo errores, con backtrace completo.

Las bibliotecas nunca llaman a esta funcion; solo main.py.
"""
import os
import sys
from pathlib import Path
from typing import Optional, Union

from loguru import logger

STDERR_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> -- <level>{message}</level>"
)


def configure_logging(level: Optional[str] = None, log_dir: Optional[Union[str, Path]] = "logs") -> None:
    """Instala los sinks; level por defecto sale de STEERKIT_LOG_LEVEL o INFO."""
    level = (level or os.getenv("STEERKIT_LOG_LEVEL") or "INFO").upper()
    logger.remove()
    logger.add(sys.stderr, format=STDERR_FORMAT, level=level)
    if log_dir is None:
        return
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    logger.add(log_dir / "steerkit.log", rotation="10 MB", retention="30 days", level="DEBUG")
    logger.add(log_dir / "errors.log", rotation="5 MB", retention="7 days", level="ERROR",
               backtrace=True, diagnose=True)
