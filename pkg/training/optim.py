"""
training/optim.py -- Adam con weight decay desacoplado y calendario escalonado.
"""
import numpy as np
from loguru import logger

from core.errors import InvalidArgumentError, NumericError
from training.params import ParamStore


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> ParamStore:
    """
    Un paso de Adam sobre los slices entrenables.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * theta
    Los buffers no se tocan.
    """
    if lr < 0 or not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0 or eps <= 0:
        raise InvalidArgumentError(f"Hiperparametros de Adam invalidos: lr={lr}, b1={beta1}, b2={beta2}, eps={eps}")
    mask = params.trainable_mask()
    g = params.grad[mask]
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(mask)[np.flatnonzero(~np.isfinite(g))[0]])
        raise NumericError("Gradiente no finito en el paso de Adam", layer=params.owner_of(bad)[0])

    params.step += 1
    t = params.step
    m = beta1 * params.adam_m[mask] + (1.0 - beta1) * g
    v = beta2 * params.adam_v[mask] + (1.0 - beta2) * g * g
    params.adam_m[mask] = m
    params.adam_v[mask] = v
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    theta = params.theta[mask]
    params.theta[mask] = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta
    logger.debug(f"[TRAIN] Adam paso {t}: lr={lr:.3g}, |g|={np.linalg.norm(g):.3e}")
    return params


def lr_at(epoch: int, lr: float, decay_factor: float = 0.5, decay_every: int = 20) -> float:
    """Tasa de aprendizaje escalonada: lr * decay_factor ** (epoch // decay_every)."""
    if decay_every < 1:
        raise InvalidArgumentError(f"decay_every debe ser >= 1: {decay_every}")
    return lr * decay_factor ** (epoch // decay_every)
