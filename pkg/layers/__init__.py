"""
layers -- Capas steerables y densas con adjunto manual.

Importar el paquete registra todos los tipos de capa en LAYERS.
"""
from layers.registry import LAYERS, FAMILY_FIELD, FAMILY_VECTOR, FieldSpec, ForwardContext, Layer, VectorSpec
from layers import conv, nonlinear, attention, dense  # noqa: F401  (registro)

__all__ = ["LAYERS", "FAMILY_FIELD", "FAMILY_VECTOR", "FieldSpec", "ForwardContext", "Layer", "VectorSpec"]
