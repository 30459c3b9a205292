"""Nadam (Adam with Nesterov momentum)."""
import numpy as np

from shared.config import BETA1, BETA2, LEARNING_RATE, NADAM_EPS
from shared.errors import NonFiniteGradientError


def nadam_step(params, grads, lr=LEARNING_RATE, beta1=BETA1, beta2=BETA2, eps=NADAM_EPS):
    """One Nadam update in place on `params`; returns `params`.

    Every gradient is checked before anything is written, so a non-finite
    gradient leaves tensors, moments and the step counter untouched.
    """
    for name, g in grads.items():
        if name not in params.tensors:
            raise KeyError(f"gradient for unknown parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for '{name}' at step {params.step}")

    t = params.step + 1
    bias1 = 1.0 - beta1 ** t
    bias1_next = 1.0 - beta1 ** (t + 1)
    bias2 = 1.0 - beta2 ** t

    for name, g in grads.items():
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = beta1 * m / bias1_next + (1.0 - beta1) * g / bias1
        v_hat = v / bias2
        params.tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)

    params.step = t
    return params
