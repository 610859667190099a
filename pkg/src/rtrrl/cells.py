"""Recurrent cells: a leaky-integrator CT-RNN and a diagonal complex LRU.

Both cells are pure functions of ``(params, h, x)``. The CT-RNN keeps one
combined weight matrix ``W`` whose columns act on ``xi = [x; h; 1]``, so the
input block is ``W[:, :I]``, the recurrent block ``W[:, I:I+N]`` and the bias
the last column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericFault

__all__ = [
    "CtRnnParams",
    "LruParams",
    "StepTrace",
    "ctrnn_step",
    "ctrnn_substep",
    "init_ctrnn",
    "init_lru",
    "lru_output",
    "lru_step",
    "rho_from_tau",
    "tau_from_rho",
]


@dataclass
class CtRnnParams:
    W: np.ndarray
    tau: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        if self.W.ndim != 2 or self.tau.ndim != 1:
            raise ConfigError("W must be a matrix and tau a vector")
        n = self.tau.shape[0]
        if self.W.shape[0] != n:
            raise ConfigError(f"W has {self.W.shape[0]} rows but tau has {n} entries")
        if self.W.shape[1] < n + 1:
            raise ConfigError(f"W needs at least N + 1 = {n + 1} columns, got {self.W.shape[1]}")
        if not 0.0 < self.dt <= 1.0:
            raise ConfigError(f"dt must lie in (0, 1], got {self.dt}")
        k = round(1.0 / self.dt)
        if abs(self.dt * k - 1.0) > 1e-12:
            raise ConfigError(f"dt = {self.dt} is not the inverse of an integer substep count")

    @property
    def n_hidden(self) -> int:
        return self.tau.shape[0]

    @property
    def n_input(self) -> int:
        return self.W.shape[1] - self.n_hidden - 1

    @property
    def k(self) -> int:
        """Euler substeps per environment step."""
        return round(1.0 / self.dt)

    @property
    def w_rec(self) -> np.ndarray:
        i = self.n_input
        return self.W[:, i:i + self.n_hidden]

    def copy(self) -> "CtRnnParams":
        return CtRnnParams(self.W.copy(), self.tau.copy(), self.dt)


@dataclass
class LruParams:
    lam: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray
    D_skip: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=complex)
        self.B_in = np.asarray(self.B_in, dtype=complex)
        self.C_out = np.asarray(self.C_out, dtype=complex)
        self.D_skip = np.asarray(self.D_skip, dtype=float)
        n = self.lam.shape[0]
        if self.B_in.shape[0] != n or self.C_out.shape[1] != n:
            raise ConfigError("B_in rows and C_out columns must match len(lam)")
        if self.D_skip.shape != (self.C_out.shape[0], self.B_in.shape[1]):
            raise ConfigError(
                f"D_skip must be {(self.C_out.shape[0], self.B_in.shape[1])}, got {self.D_skip.shape}"
            )

    @property
    def n_hidden(self) -> int:
        return self.lam.shape[0]

    @property
    def n_input(self) -> int:
        return self.B_in.shape[1]

    @property
    def n_output(self) -> int:
        return self.C_out.shape[0]

    def copy(self) -> "LruParams":
        return LruParams(self.lam.copy(), self.B_in.copy(), self.C_out.copy(), self.D_skip.copy())


@dataclass
class StepTrace:
    xi: np.ndarray
    preact: np.ndarray
    act_deriv: np.ndarray


def tau_from_rho(rho):
    """``tau = 1 + softplus(rho)``; keeps every time constant above one."""
    return 1.0 + np.logaddexp(0.0, rho)


def rho_from_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 1.0):
        raise ConfigError("time constants must be strictly greater than 1 to be reparameterised")
    # inverse softplus, stable for large arguments
    y = tau - 1.0
    return y + np.log(-np.expm1(-y))


def init_ctrnn(rng: np.random.Generator, n_input: int, n_hidden: int, dt: float = 1.0,
               tau_range=(1.0, 10.0)) -> CtRnnParams:
    """Fan-in scaled uniform weights, zero bias, log-uniform time constants."""
    z = n_input + n_hidden + 1
    bound = 1.0 / np.sqrt(z)
    W = rng.uniform(-bound, bound, size=(n_hidden, z))
    W[:, -1] = 0.0
    lo, hi = tau_range
    if lo < 1.0 or hi < lo:
        raise ConfigError(f"invalid tau range {tau_range}")
    tau = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n_hidden))
    # strictly above one so the softplus reparameterisation stays finite
    tau = np.maximum(tau, 1.0 + 1e-3)
    return CtRnnParams(W, tau, dt)


def init_lru(rng: np.random.Generator, n_input: int, n_hidden: int, n_output: int | None = None,
             r_min: float = 0.5, r_max: float = 0.99, max_phase: float = np.pi / 8) -> LruParams:
    """Stable-ring initialisation: ``|lam|`` uniform in the annulus, small phases."""
    if n_output is None:
        n_output = n_hidden
    u1 = rng.uniform(size=n_hidden)
    # uniform on the ring area between r_min and r_max
    modulus = np.sqrt(u1 * (r_max ** 2 - r_min ** 2) + r_min ** 2)
    phase = rng.uniform(0.0, max_phase, size=n_hidden)
    lam = modulus * np.exp(1j * phase)
    # input normalisation keeps the stationary state variance O(|x|^2)
    gamma = np.sqrt(1.0 - modulus ** 2)
    B = (rng.normal(size=(n_hidden, n_input)) + 1j * rng.normal(size=(n_hidden, n_input)))
    B *= (gamma / np.sqrt(2 * n_input))[:, None]
    C = (rng.normal(size=(n_output, n_hidden)) + 1j * rng.normal(size=(n_output, n_hidden)))
    C /= np.sqrt(n_hidden)
    D = rng.normal(size=(n_output, n_input)) / np.sqrt(n_input)
    return LruParams(lam, B, C, D)


def ctrnn_substep(W, tau, dt, h, x):
    """One forward-Euler substep. Returns ``(h_next, xi, preact, act, act_deriv)``."""
    xi = np.concatenate((x, h, (1.0,)))
    preact = W @ xi
    act = np.tanh(preact)
    h_next = h + (dt / tau) * (act - h)
    return h_next, xi, preact, act, 1.0 - act * act


def _check_ctrnn_dims(params: CtRnnParams, h, x):
    if h.shape != (params.n_hidden,):
        raise ConfigError(f"hidden state has shape {h.shape}, expected ({params.n_hidden},)")
    if x.shape != (params.n_input,):
        raise ConfigError(f"input has shape {x.shape}, expected ({params.n_input},)")


def ctrnn_step(params: CtRnnParams, h, x, step=None):
    """Advance the CT-RNN by one environment step (``k`` Euler substeps).

    Returns the new hidden state and the :class:`StepTrace` of the final
    substep.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_ctrnn_dims(params, h, x)
    W, tau, dt = params.W, params.tau, params.dt
    for _ in range(params.k):
        h, xi, preact, _, deriv = ctrnn_substep(W, tau, dt, h, x)
    if not np.all(np.isfinite(h)):
        raise NumericFault("non-finite CT-RNN hidden state", step=step)
    return h, StepTrace(xi, preact, deriv)


def lru_step(params: LruParams, h, x, step=None):
    """Diagonal linear recurrence ``h' = lam * h + B_in @ x``."""
    x = np.asarray(x, dtype=float)
    if h.shape != (params.n_hidden,) or x.shape != (params.n_input,):
        raise ConfigError(f"LRU step got h{h.shape}, x{x.shape}")
    if not np.all(np.isfinite(params.lam)):
        raise NumericFault("non-finite LRU eigenvalues", step=step, block="lam")
    h_next = params.lam * h + params.B_in @ x
    if not np.all(np.isfinite(h_next)):
        raise NumericFault("non-finite LRU hidden state", step=step)
    return h_next


def lru_output(params: LruParams, h, x):
    """Real readout ``Re[C_out h] + D_skip x``."""
    x = np.asarray(x, dtype=float)
    if h.shape != (params.n_hidden,) or x.shape != (params.n_input,):
        raise ConfigError(f"LRU output got h{h.shape}, x{x.shape}")
    return (params.C_out @ h).real + params.D_skip @ x
