"""
core/errors.py -- Jerarquia de excepciones de steerkit.

Todas las excepciones propias heredan de SteerkitError y, ademas, de la
excepcion estandar mas cercana (ValueError, ArithmeticError, OSError) para
que el codigo cliente pueda capturarlas sin conocer esta jerarquia.

Mapeo a codigos de salida del CLI (ver main.py):
  - ConfigError / InvalidArgumentError / otros SteerkitError -> 2
  - Auditoria fallida (no es excepcion)                    -> 1
"""
from typing import Any, Optional


class SteerkitError(Exception):
    """Raiz de todas las excepciones de steerkit."""


class InvalidArgumentError(SteerkitError, ValueError):
    """Argumento fuera de dominio (precondicion violada)."""


# ---------------------------------------------------------------------------
# Formato STFL
# ---------------------------------------------------------------------------

class FieldFormatError(SteerkitError, ValueError):
    """
    Error al interpretar un archivo STFL.

    Atributos:
        field_name: Campo del encabezado que fallo ("magic", "version", "payload", ...).
        expected: Valor esperado.
        actual: Valor encontrado.
    """

    def __init__(self, message: str, field_name: str, expected: Any = None, actual: Any = None):
        super().__init__(message)
        self.field_name = field_name
        self.expected = expected
        self.actual = actual


class MagicMismatchError(FieldFormatError):
    """Los bytes magicos no coinciden."""


class VersionMismatchError(FieldFormatError):
    """Version de formato no soportada."""


class TruncatedPayloadError(FieldFormatError):
    """El archivo termina antes de lo que declara su encabezado."""


# ---------------------------------------------------------------------------
# Formato IDX
# ---------------------------------------------------------------------------

class IdxFormatError(SteerkitError, ValueError):
    """Error al interpretar un archivo IDX."""


class IdxMagicError(IdxFormatError):
    """Numero magico IDX inesperado."""


class IdxCountMismatchError(IdxFormatError):
    """Imagenes y etiquetas declaran cantidades distintas."""


class IdxTruncatedError(IdxFormatError):
    """Payload IDX incompleto."""


# ---------------------------------------------------------------------------
# Checkpoints, configuracion, numerica, datos
# ---------------------------------------------------------------------------

class CheckpointError(SteerkitError, ValueError):
    """Checkpoint STCK invalido (magic, version o manifiesto)."""


class ConfigError(SteerkitError, ValueError):
    """
    Documento de configuracion invalido.

    Atributos:
        field: Ruta con puntos del campo culpable (p.ej. "model.heads").
    """

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class ShapeChainError(ConfigError):
    """Las formas de capas adyacentes no encadenan."""


class NumericError(SteerkitError, ArithmeticError):
    """
    Valor no finito detectado.

    Atributos:
        layer: Nombre de la capa donde aparecio el valor.
    """

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(f"[{layer}] {message}" if layer else message)
        self.layer = layer


class DatasetError(SteerkitError, OSError):
    """Dataset ilegible o inexistente."""
