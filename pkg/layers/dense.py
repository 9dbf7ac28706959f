"""
layers/dense.py -- Capas reales sobre vectores [B, F] para la cabeza de clasificacion.

Viven despues de norm_flatten, donde las caracteristicas ya son invariantes,
por lo que no llevan auditoria de equivarianza.
"""
import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError
from layers.registry import LAYERS, FAMILY_VECTOR, ForwardContext, Layer, VectorSpec


@LAYERS.register("linear", family=FAMILY_VECTOR)
class Linear(Layer):
    """y = x W + b con W [F_in, F_out] en inicializacion He."""

    def __init__(self, name: str, out_features: int):
        super().__init__(name)
        if int(out_features) < 1:
            raise InvalidArgumentError(f"out_features debe ser >= 1: {out_features}")
        self.out_features = int(out_features)

    def output_spec(self, spec):
        self.require_vector(spec)
        return VectorSpec(self.out_features)

    def register(self, store, rng):
        fan_in = self.input_spec.features
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, self.out_features))
        store.register(self.key("weight"), w.shape, "real", w)
        store.register(self.key("bias"), (self.out_features,), "real")

    def forward(self, store, x: np.ndarray, ctx: ForwardContext):
        return x @ store.get(self.key("weight")) + store.get(self.key("bias")), x

    def backward(self, store, cache: np.ndarray, gy: np.ndarray):
        w = store.get(self.key("weight"))
        store.accumulate(self.key("weight"), cache.T @ gy)
        store.accumulate(self.key("bias"), gy.sum(axis=0))
        return gy @ w.T


@LAYERS.register("batch_norm_1d", family=FAMILY_VECTOR)
class BatchNorm1d(Layer):
    """
    Batch norm por caracteristica.

    Parametros: <name>.gamma, <name>.beta; buffers <name>.running_mean,
    <name>.running_var (varianza insesgada, momentum sobre el valor nuevo).
    """

    def __init__(self, name: str, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(name)
        if not 0.0 <= momentum <= 1.0 or eps <= 0:
            raise InvalidArgumentError(f"batch_norm_1d: momentum={momentum}, eps={eps}")
        self.momentum = float(momentum)
        self.eps = float(eps)

    def output_spec(self, spec):
        return self.require_vector(spec)

    def register(self, store, rng):
        f = self.input_spec.features
        store.register(self.key("gamma"), (f,), "real", np.ones(f))
        store.register(self.key("beta"), (f,), "real")
        store.register(self.key("running_mean"), (f,), "buffer")
        store.register(self.key("running_var"), (f,), "buffer", np.ones(f))

    def forward(self, store, x: np.ndarray, ctx: ForwardContext):
        gamma, beta = store.get(self.key("gamma")), store.get(self.key("beta"))
        if ctx.train:
            n = x.shape[0]
            if n < 2:
                raise InvalidArgumentError(f"{self.name}: batch norm en entrenamiento requiere B >= 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if ctx.update_stats:
                m = self.momentum
                rm, rv = self.key("running_mean"), self.key("running_var")
                store.set(rm, (1 - m) * store.get(rm) + m * mean)
                store.set(rv, (1 - m) * store.get(rv) + m * var * n / (n - 1))
        else:
            mean = store.get(self.key("running_mean"))
            var = store.get(self.key("running_var"))
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        return gamma * xhat + beta, {"xhat": xhat, "inv": inv, "train": ctx.train}

    def backward(self, store, cache, gy: np.ndarray):
        gamma = store.get(self.key("gamma"))
        xhat, inv = cache["xhat"], cache["inv"]
        store.accumulate(self.key("gamma"), np.sum(gy * xhat, axis=0))
        store.accumulate(self.key("beta"), gy.sum(axis=0))
        g_hat = gy * gamma
        if not cache["train"]:
            return g_hat * inv
        return inv * (g_hat - g_hat.mean(axis=0) - xhat * np.mean(g_hat * xhat, axis=0))


@LAYERS.register("relu", family=FAMILY_VECTOR)
class ReLU(Layer):
    def output_spec(self, spec):
        return self.require_vector(spec)

    def forward(self, store, x: np.ndarray, ctx: ForwardContext):
        mask = ctx.gate(self.name, lambda: x > 0)
        return np.where(mask, x, 0.0), mask

    def backward(self, store, cache, gy: np.ndarray):
        return np.where(cache, gy, 0.0)


@LAYERS.register("dropout", family=FAMILY_VECTOR)
class Dropout(Layer):
    """Dropout invertido; activo solo con ctx.train y ctx.dropout."""

    def __init__(self, name: str, p: float = 0.5):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise InvalidArgumentError(f"dropout: p debe estar en [0, 1): {p}")
        self.p = float(p)

    def output_spec(self, spec):
        return self.require_vector(spec)

    def forward(self, store, x: np.ndarray, ctx: ForwardContext):
        if not (ctx.train and ctx.dropout) or self.p == 0.0:
            return x, None
        if ctx.rng is None:
            raise InvalidArgumentError(f"{self.name}: dropout en entrenamiento requiere un generador")
        mask = (ctx.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        logger.trace(f"[LAYERS] {self.name}: {int(np.count_nonzero(mask))}/{mask.size} activos")
        return x * mask, mask

    def backward(self, store, cache, gy: np.ndarray):
        return gy if cache is None else gy * cache
