"""Linear actor and critic heads, TD errors and eligibility traces.

The heads read a real feature vector (the CT-RNN state, or the LRU readout)
and route their gradients back into the recurrent network either through
fixed random matrices (feedback alignment, ``"fa"``) or through their own
forward weights (``"exact"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .errors import ConfigError, NumericFault
from .online_grad import apply_feedback
from .optim import clip_by_norm

__all__ = [
    "ActionDistribution",
    "EligibilityTraces",
    "HeadParams",
    "accumulate_traces",
    "apply_updates",
    "entropy_and_grad",
    "init_heads",
    "policy_forward",
    "route_feedback",
    "td_error",
    "value_forward",
]

_HALF_LOG_2PIE = 0.5 * np.log(2.0 * np.pi * np.e)


@dataclass
class HeadParams:
    """Actor/critic weights plus the fixed feedback matrices.

    ``theta_A`` is ``[n_actions, N]`` for categorical policies; for Gaussian
    policies it holds the mean rows and ``log_std`` is a separate learned,
    state-independent vector.
    """

    theta_A: np.ndarray
    theta_C: np.ndarray
    B_A: np.ndarray
    B_C: np.ndarray
    kind: str = "categorical"
    log_std: np.ndarray | None = None

    def copy(self):
        return HeadParams(self.theta_A.copy(), self.theta_C.copy(), self.B_A.copy(), self.B_C.copy(),
                          self.kind, None if self.log_std is None else self.log_std.copy())


def init_heads(rng: np.random.Generator, n_features: int, n_out: int, kind="categorical",
               init_scale=0.0, log_std_init=0.0) -> HeadParams:
    """Heads start at ``init_scale``-scaled Gaussians; feedback is ``N(0, 1/N)``."""
    if kind not in ("categorical", "gaussian"):
        raise ConfigError(f"unknown action distribution {kind!r}")
    theta_A = init_scale * rng.normal(size=(n_out, n_features)) / np.sqrt(n_features)
    theta_C = init_scale * rng.normal(size=n_features) / np.sqrt(n_features)
    B_A = rng.normal(size=(n_features, n_out)) / np.sqrt(n_features)
    B_C = rng.normal(size=(n_features, 1)) / np.sqrt(n_features)
    log_std = np.full(n_out, float(log_std_init)) if kind == "gaussian" else None
    return HeadParams(theta_A, theta_C, B_A, B_C, kind, log_std)


@dataclass
class ActionDistribution:
    kind: str
    logits: np.ndarray | None = None
    mean: np.ndarray | None = None
    log_std: np.ndarray | None = None
    _probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def probs(self):
        if self._probs is None:
            z = self.logits - self.logits.max()
            e = np.exp(z)
            self._probs = e / e.sum()
        return self._probs

    @property
    def std(self):
        return np.exp(self.log_std)

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            p = self.probs
            # inverse-CDF draw; avoids the per-call overhead of rng.choice
            idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
            return min(idx, len(p) - 1)
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def mode(self):
        if self.kind == "categorical":
            return int(np.argmax(self.logits))
        return self.mean.copy()

    def log_prob(self, action):
        if self.kind == "categorical":
            z = self.logits - self.logits.max()
            return float(z[action] - np.log(np.exp(z).sum()))
        a = np.asarray(action, dtype=float)
        return float(np.sum(-0.5 * ((a - self.mean) / self.std) ** 2 - self.log_std
                            - 0.5 * np.log(2.0 * np.pi)))

    def grad_log_prob(self, action):
        """Gradient of ``log pi[a]`` w.r.t. the head outputs.

        Categorical: w.r.t. the logits, ``onehot(a) - p``. Gaussian: a pair
        ``(d/dmean, d/dlog_std)``.
        """
        if self.kind == "categorical":
            g = -self.probs.copy()
            g[action] += 1.0
            return g
        a = np.asarray(action, dtype=float)
        var = self.std ** 2
        return (a - self.mean) / var, (a - self.mean) ** 2 / var - 1.0


def policy_forward(heads: HeadParams, feat) -> ActionDistribution:
    if heads.kind == "categorical":
        return ActionDistribution("categorical", logits=heads.theta_A @ feat)
    return ActionDistribution("gaussian", mean=heads.theta_A @ feat, log_std=heads.log_std)


def value_forward(theta_C, feat) -> float:
    return float(theta_C @ feat)


def td_error(r, gamma, v, v_next, terminal) -> float:
    """``r + gamma * v_next - v``, with the bootstrap masked on terminal steps."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
    return float(r + (0.0 if terminal else gamma * v_next) - v)


def entropy_and_grad(dist: ActionDistribution):
    """Entropy and its gradient w.r.t. the head outputs.

    Categorical: ``dH/dz_j = -p_j (log p_j + H)``. Gaussian: the entropy does
    not depend on the mean, so the gradient is ``(0, ones)`` for
    ``(mean, log_std)``.
    """
    if dist.kind == "categorical":
        p = dist.probs
        z = dist.logits - dist.logits.max()
        logp = z - np.log(np.exp(z).sum())
        H = float(-(p * logp).sum())
        return H, -p * (logp + H)
    H = float(np.sum(dist.log_std + _HALF_LOG_2PIE))
    return H, (np.zeros_like(dist.mean), np.ones_like(dist.log_std))


def route_feedback(mode, heads: HeadParams, dist_grad):
    """Error signals ``(g_C, g_A)`` delivered to the features.

    ``dist_grad`` is ``d log pi[a] / d outputs`` (logits, or the mean for a
    Gaussian policy).
    """
    if mode == "fa":
        return heads.B_C[:, 0], heads.B_A @ dist_grad
    if mode == "exact":
        return heads.theta_C, heads.theta_A.T @ dist_grad
    raise ConfigError(f"unknown feedback mode {mode!r} (expected 'fa' or 'exact')")


@dataclass
class EligibilityTraces:
    e_A: np.ndarray
    e_C: np.ndarray
    e_R: dict
    e_log_std: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, heads: HeadParams, rnn_blocks: dict):
        return cls(np.zeros_like(heads.theta_A), np.zeros_like(heads.theta_C),
                   {k: np.zeros_like(v) for k, v in rnn_blocks.items()},
                   None if heads.log_std is None else np.zeros_like(heads.log_std))

    def copy(self):
        return EligibilityTraces(self.e_A.copy(), self.e_C.copy(),
                                 {k: v.copy() for k, v in self.e_R.items()},
                                 None if self.e_log_std is None else self.e_log_std.copy())

    def reset(self):
        self.e_A[...] = 0.0
        self.e_C[...] = 0.0
        for v in self.e_R.values():
            v[...] = 0.0
        if self.e_log_std is not None:
            self.e_log_std[...] = 0.0


def accumulate_traces(traces: EligibilityTraces, grad_v, grad_logp, J, g_C, g_A,
                      gamma, lam_A, lam_C, lam_R, eta_A=1.0, contract=apply_feedback,
                      grad_log_std=None) -> EligibilityTraces:
    """Decay every trace by ``gamma * lambda`` and add the new gradient.

    ``e_R`` receives ``contract(J, g_C + eta_A * g_A)``; ``contract`` maps a
    trace and a feature-space error to parameter-shaped gradients (the
    default is :func:`~rtrrl.online_grad.apply_feedback`). Returns new traces.
    """
    e_C = gamma * lam_C * traces.e_C + grad_v
    e_A = gamma * lam_A * traces.e_A + grad_logp
    rnn = contract(J, g_C + eta_A * g_A)
    dR = gamma * lam_R
    e_R = {}
    for k, prev in traces.e_R.items():
        e_R[k] = dR * prev + rnn[k]
    e_ls = None
    if traces.e_log_std is not None:
        e_ls = gamma * lam_A * traces.e_log_std + grad_log_std
    return EligibilityTraces(e_A, e_C, e_R, e_ls)


def apply_updates(params: dict, directions: dict, lrs: dict, optimizer, clip=None, step=None):
    """Step every block along its ascent direction.

    ``directions[k]`` is ``delta * e_k`` plus any entropy term; the optimiser
    descends on its negation after the per-block norm clip. Blocks with a
    zero learning rate are left untouched. Returns ``(new_params, grad_norms)``.
    """
    new, norms = dict(params), {}
    for k, d in directions.items():
        lr = lrs[k]
        grad, norms[k] = clip_by_norm(-d, clip)
        # the norm is non-finite exactly when some entry is (or overflows)
        if not math.isfinite(norms[k]):
            raise NumericFault("non-finite parameter update", step=step, block=k)
        if lr == 0.0:
            continue
        new[k] = optimizer.step(k, params[k], grad, lr)
    return new, norms
