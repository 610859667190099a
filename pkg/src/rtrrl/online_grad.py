"""Forward-mode gradient engines that carry dh/dtheta alongside the state.

Three engines are provided:

* ``rtrl_step``     exact real-time recurrent learning for the CT-RNN,
                    trace ``W: [N, N, Z]`` (dh_i / dW_jk) and ``tau: [N, N]``.
* ``rflo_step``     the local approximation that keeps only the diagonal
                    blocks, trace ``W: [N, Z]`` and ``tau: [N]``.
* ``lru_rtrl_step`` exact RTRL for the diagonal LRU, trace ``lam: [N]`` and
                    ``B_in: [N, I]`` (complex).

Traces are always taken with respect to ``tau`` itself; callers that
optimise an unconstrained ``rho`` chain-rule afterwards.

``apply_feedback`` contracts a trace with an error signal at the hidden
state and yields parameter-shaped gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .cells import CtRnnParams, LruParams, ctrnn_substep
from .errors import ConfigError, NumericFault

__all__ = [
    "LruTrace",
    "RfloTrace",
    "RtrlTrace",
    "apply_feedback",
    "count_ops",
    "lru_rtrl_step",
    "rflo_step",
    "rtrl_step",
    "zero_trace",
]


@dataclass
class RtrlTrace:
    W: np.ndarray
    tau: np.ndarray

    def copy(self):
        return RtrlTrace(self.W.copy(), self.tau.copy())


@dataclass
class RfloTrace:
    W: np.ndarray
    tau: np.ndarray

    def copy(self):
        return RfloTrace(self.W.copy(), self.tau.copy())


@dataclass
class LruTrace:
    lam: np.ndarray
    B_in: np.ndarray

    def copy(self):
        return LruTrace(self.lam.copy(), self.B_in.copy())


class _OpCounter:
    enabled = False
    count = 0


_ops = _OpCounter()


@contextmanager
def count_ops():
    """Count scalar multiply-adds spent on trace updates inside the block.

    >>> with count_ops() as ops:
    ...     pass
    >>> ops.count
    0
    """
    _ops.enabled, _ops.count = True, 0
    try:
        yield _ops
    finally:
        _ops.enabled = False


def zero_trace(params, mode: str):
    if mode == "rtrl":
        n, z = params.W.shape
        return RtrlTrace(np.zeros((n, n, z)), np.zeros((n, n)))
    if mode == "rflo":
        n, z = params.W.shape
        return RfloTrace(np.zeros((n, z)), np.zeros(n))
    if mode == "diag_rtrl":
        return LruTrace(np.zeros(params.n_hidden, dtype=complex),
                        np.zeros((params.n_hidden, params.n_input), dtype=complex))
    raise ConfigError(f"unknown gradient mode {mode!r}")


def _finite(arr) -> bool:
    # a sum is non-finite whenever an entry is; cheaper than isfinite().all()
    return bool(np.isfinite(np.sum(arr)))


def _check_trace(J, params, step):
    for name, arr in vars(J).items():
        if not _finite(arr):
            raise NumericFault("non-finite Jacobian trace", step=step, block=name)


def rtrl_step(params: CtRnnParams, h, x, J: RtrlTrace, step=None):
    """Advance ``h`` and the exact trace by one environment step.

    Per substep, with ``a = dt / tau`` and ``D = phi'(W xi)``::

        J' = (1 - a) J + a D (W_rec J) + immediate

    where the immediate part is ``a_i D_i xi_k`` at ``[i, i, k]`` for ``W`` and
    ``dt (h_i - phi_i) / tau_i**2`` at ``[i, i]`` for ``tau``.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    n, z = params.W.shape
    if J.W.shape != (n, n, z) or J.tau.shape != (n, n):
        raise ConfigError(f"RTRL trace shapes {J.W.shape}/{J.tau.shape} do not match N={n}, Z={z}")
    W, tau, dt = params.W, params.tau, params.dt
    w_rec = params.w_rec
    JW, Jtau = J.W, J.tau
    idx = np.arange(n)
    for _ in range(params.k):
        h_next, xi, _, act, deriv = ctrnn_substep(W, tau, dt, h, x)
        a = dt / tau
        ad = a * deriv
        JW = (1.0 - a)[:, None, None] * JW + ad[:, None, None] * np.tensordot(w_rec, JW, axes=1)
        JW[idx, idx, :] += ad[:, None] * xi[None, :]
        Jtau = (1.0 - a)[:, None] * Jtau + ad[:, None] * (w_rec @ Jtau)
        Jtau[idx, idx] += dt * (h - act) / tau ** 2
        if _ops.enabled:
            _ops.count += n * JW.size + n * Jtau.size
        h = h_next
    if not _finite(h):
        raise NumericFault("non-finite CT-RNN hidden state", step=step)
    J = RtrlTrace(JW, Jtau)
    _check_trace(J, params, step)
    return h, J


def rflo_step(params: CtRnnParams, h, x, J: RfloTrace, step=None):
    """Advance ``h`` and the block-diagonal trace by one environment step.

    ``J_W[i, k] <- (1 - a_i) J_W[i, k] + a_i phi'_i xi_k`` and
    ``J_tau[i] <- (1 - a_i) J_tau[i] + dt (h_i - phi_i) / tau_i**2``.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    n, z = params.W.shape
    if J.W.shape != (n, z) or J.tau.shape != (n,):
        raise ConfigError(f"RFLO trace shapes {J.W.shape}/{J.tau.shape} do not match N={n}, Z={z}")
    W, tau, dt = params.W, params.tau, params.dt
    JW, Jtau = J.W, J.tau
    for _ in range(params.k):
        h_next, xi, _, act, deriv = ctrnn_substep(W, tau, dt, h, x)
        a = dt / tau
        decay = 1.0 - a
        JW = decay[:, None] * JW + np.outer(a * deriv, xi)
        Jtau = decay * Jtau + dt * (h - act) / tau ** 2
        if _ops.enabled:
            _ops.count += JW.size + Jtau.size
        h = h_next
    if not _finite(h):
        raise NumericFault("non-finite CT-RNN hidden state", step=step)
    J = RfloTrace(JW, Jtau)
    _check_trace(J, params, step)
    return h, J


def lru_rtrl_step(params: LruParams, h, x, J: LruTrace, step=None):
    """Advance the LRU state and its exact per-neuron sensitivities.

    Because the transition is diagonal, ``dh_i/dlam_i`` and ``dh_i/dB_ij`` obey
    scalar recursions: ``s <- lam_i s + h_i`` and ``s <- lam_i s + x_j``.
    """
    x = np.asarray(x, dtype=float)
    n, i = params.n_hidden, params.n_input
    if h.shape != (n,) or x.shape != (i,):
        raise ConfigError(f"LRU step got h{h.shape}, x{x.shape}")
    if J.lam.shape != (n,) or J.B_in.shape != (n, i):
        raise ConfigError("LRU trace shapes do not match parameters")
    lam = params.lam
    s_lam = lam * J.lam + h
    s_B = lam[:, None] * J.B_in + x[None, :]
    h_next = lam * h + params.B_in @ x
    if _ops.enabled:
        _ops.count += s_lam.size + s_B.size
    if not _finite(h_next):
        raise NumericFault("non-finite LRU hidden state", step=step)
    J = LruTrace(s_lam, s_B)
    _check_trace(J, params, step)
    return h_next, J


def apply_feedback(J, eps) -> dict:
    """Contract a trace with the error ``eps`` delivered at the hidden state.

    For the LRU ``eps`` is ``dL/dRe(h) + 1j * dL/dIm(h)`` and the result is
    ``dL/dRe(theta) + 1j * dL/dIm(theta)`` for each complex parameter.
    """
    if isinstance(J, RfloTrace):
        eps = np.asarray(eps, dtype=float)
        if eps.shape != J.tau.shape:
            raise ConfigError(f"error has shape {eps.shape}, trace expects {J.tau.shape}")
        return {"W": eps[:, None] * J.W, "tau": eps * J.tau}
    if isinstance(J, RtrlTrace):
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (J.W.shape[0],):
            raise ConfigError(f"error has shape {eps.shape}, trace expects ({J.W.shape[0]},)")
        return {"W": np.tensordot(eps, J.W, axes=1), "tau": eps @ J.tau}
    if isinstance(J, LruTrace):
        eps = np.asarray(eps, dtype=complex)
        if eps.shape != J.lam.shape:
            raise ConfigError(f"error has shape {eps.shape}, trace expects {J.lam.shape}")
        return {"lam": eps * np.conj(J.lam), "B_in": eps[:, None] * np.conj(J.B_in)}
    raise TypeError(f"unsupported trace type {type(J).__name__}")
