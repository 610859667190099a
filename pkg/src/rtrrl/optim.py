"""Per-block optimisers and gradient clipping.

Complex blocks are optimised as independent real and imaginary parts.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

__all__ = ["Adam", "SGD", "clip_by_norm", "make_optimizer"]


def clip_by_norm(grad, max_norm):
    """Rescale ``grad`` so its Euclidean norm is at most ``max_norm``.

    Returns ``(clipped, norm_before)``. ``max_norm`` of ``None`` or ``<= 0``
    disables clipping.
    """
    flat = np.ravel(grad)
    norm = math.sqrt(np.vdot(flat, flat).real)
    if max_norm and max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def _real_view(a):
    return a.view(float) if np.iscomplexobj(a) else a


class SGD:
    name = "sgd"

    def __init__(self):
        self.state = {}

    def step(self, key, param, grad, lr):
        return param - lr * grad

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass


class Adam:
    """Bias-corrected Adam with one moment pair per named block."""

    name = "adam"

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {}

    def step(self, key, param, grad, lr):
        param = np.array(param, copy=True)
        p = _real_view(param)
        g = _real_view(np.ascontiguousarray(grad, dtype=param.dtype))
        if key not in self.state:
            self.state[key] = [np.zeros_like(p), np.zeros_like(p), 0]
        m, v, t = self.state[key]
        t += 1
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        denom = v / (1.0 - self.beta2 ** t)
        np.sqrt(denom, out=denom)
        denom += self.eps
        upd = m / (1.0 - self.beta1 ** t)
        upd *= lr
        upd /= denom
        p -= upd
        self.state[key][2] = t
        return param

    def state_dict(self):
        out = {}
        for key, (m, v, t) in self.state.items():
            out[f"{key}.m"] = m.copy()
            out[f"{key}.v"] = v.copy()
            out[f"{key}.t"] = np.array(t)
        return out

    def load_state_dict(self, state):
        keys = {k.rsplit(".", 1)[0] for k in state}
        self.state = {
            k: [np.array(state[f"{k}.m"]), np.array(state[f"{k}.v"]), int(state[f"{k}.t"])]
            for k in keys
        }


def make_optimizer(name: str):
    if name == "adam":
        return Adam()
    if name == "sgd":
        return SGD()
    raise ConfigError(f"unknown optimizer {name!r} (expected 'adam' or 'sgd')")
