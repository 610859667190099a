"""Independent reference computations used by the tests and ``verify``.

Nothing here imports the engines it checks: the CT-RNN and LRU recursions are
re-derived with explicit scalar loops, gradients come from central differences
or from reverse accumulation over a stored rollout.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "FiniteDiffSpec",
    "adam_reference",
    "ctrnn_rollout",
    "ctrnn_step_loops",
    "fd_jacobian",
    "geometric_trace",
    "literal_rtrrl",
    "lru_closed_form",
    "mrp_value_solver",
    "rel_err",
    "rflo_tau_trace_loops",
    "unrolled_grad",
]


class FiniteDiffSpec:
    def __init__(self, perturbation=1e-5, tolerance=1e-4):
        if perturbation <= 0:
            raise ValueError("perturbation must be positive")
        self.perturbation = perturbation
        self.scheme = "central"
        self.tolerance = tolerance


def rel_err(a, b) -> float:
    """``max|a - b| / max(max|a|, max|b|, 1e-8)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = max(float(np.max(np.abs(a))) if a.size else 0.0,
              float(np.max(np.abs(b))) if b.size else 0.0, 1e-8)
    return num / den


def fd_jacobian(rollout, params: dict, perturbation: float = 1e-5) -> dict:
    """Central-difference Jacobian of ``rollout(params)`` w.r.t. every entry.

    Returns ``{name: J}`` with ``J.shape == out.shape + param.shape``. For a
    complex parameter the value is a pair ``(d/dRe, d/dIm)``.
    """
    base = np.asarray(rollout(params))
    out = {}
    for name, value in params.items():
        value = np.asarray(value)
        parts = [1.0, 1j] if np.iscomplexobj(value) else [1.0]
        results = []
        for unit in parts:
            jac = np.zeros(base.shape + value.shape, dtype=base.dtype)
            for idx in np.ndindex(value.shape):
                plus = {k: np.array(v, copy=True) for k, v in params.items()}
                minus = {k: np.array(v, copy=True) for k, v in params.items()}
                plus[name][idx] += unit * perturbation
                minus[name][idx] -= unit * perturbation
                diff = (np.asarray(rollout(plus)) - np.asarray(rollout(minus))) / (2 * perturbation)
                jac[(Ellipsis,) + idx] = diff
            results.append(jac)
        out[name] = tuple(results) if len(results) == 2 else results[0]
    return out


def ctrnn_step_loops(W, tau, dt, h, x):
    """One environment step of the CT-RNN written with scalar loops."""
    W = np.asarray(W, dtype=float)
    n = len(tau)
    n_in = len(x)
    k = int(round(1.0 / dt))
    h = [float(v) for v in h]
    for _ in range(k):
        xi = list(x) + h + [1.0]
        new = []
        for i in range(n):
            u = 0.0
            for j in range(n_in + n + 1):
                u += W[i, j] * xi[j]
            new.append(h[i] + dt / tau[i] * (-h[i] + math.tanh(u)))
        h = new
    return np.array(h)


def ctrnn_rollout(W, tau, dt, xs, h0=None):
    n = len(tau)
    h = np.zeros(n) if h0 is None else np.asarray(h0, dtype=float)
    for x in xs:
        h = ctrnn_step_loops(W, tau, dt, h, x)
    return h


def lru_closed_form(lam, B, xs, h0=None):
    """``h_T = lam^T h0 + sum_t lam^(T-1-t) B x_t`` by direct summation."""
    lam = np.asarray(lam, dtype=complex)
    B = np.asarray(B, dtype=complex)
    T = len(xs)
    h = np.zeros(len(lam), dtype=complex)
    if h0 is not None:
        h = h + lam ** T * np.asarray(h0, dtype=complex)
    for t, x in enumerate(xs):
        bx = np.array([sum(B[i, j] * x[j] for j in range(len(x))) for i in range(len(lam))])
        h = h + lam ** (T - 1 - t) * bx
    return h


def unrolled_grad(cell: str, params: dict, xs, dloss_dh, h0=None) -> dict:
    """Gradient of ``L(h_T)`` by reverse accumulation through a stored rollout.

    ``dloss_dh`` is ``dL/dh_T`` (for the LRU in the ``dRe + 1j dIm``
    convention). ``cell`` is ``"ctrnn"`` (params ``W``, ``tau``, ``dt``) or
    ``"lru"`` (params ``lam``, ``B_in``).
    """
    if cell == "ctrnn":
        return _unrolled_ctrnn(params, xs, dloss_dh, h0)
    if cell == "lru":
        return _unrolled_lru(params, xs, dloss_dh, h0)
    raise ValueError(f"unknown cell {cell!r}")


def _unrolled_ctrnn(params, xs, g, h0):
    W = np.asarray(params["W"], dtype=float)
    tau = np.asarray(params["tau"], dtype=float)
    dt = float(params.get("dt", 1.0))
    k = int(round(1.0 / dt))
    n = len(tau)
    n_in = W.shape[1] - n - 1
    # forward, storing every substep
    tape = []
    h = np.zeros(n) if h0 is None else np.asarray(h0, dtype=float).copy()
    for x in xs:
        for _ in range(k):
            xi = np.concatenate([np.asarray(x, dtype=float), h, [1.0]])
            act = np.array([math.tanh(sum(W[i, j] * xi[j] for j in range(len(xi)))) for i in range(n)])
            tape.append((h.copy(), xi, act))
            h = h + dt / tau * (act - h)
    # backward
    adj = np.asarray(g, dtype=float).copy()
    gW = np.zeros_like(W)
    gtau = np.zeros(n)
    for h_prev, xi, act in reversed(tape):
        new_adj = np.zeros(n)
        for i in range(n):
            a = dt / tau[i]
            pre = adj[i] * a * (1.0 - act[i] ** 2)
            for j in range(len(xi)):
                gW[i, j] += pre * xi[j]
            gtau[i] += adj[i] * (-dt / tau[i] ** 2) * (act[i] - h_prev[i])
            new_adj[i] += adj[i] * (1.0 - a)
            for m in range(n):
                new_adj[m] += pre * W[i, n_in + m]
        adj = new_adj
    return {"W": gW, "tau": gtau, "h0": adj}


def _unrolled_lru(params, xs, g, h0):
    lam = np.asarray(params["lam"], dtype=complex)
    B = np.asarray(params["B_in"], dtype=complex)
    n = len(lam)
    hs = [np.zeros(n, dtype=complex) if h0 is None else np.asarray(h0, dtype=complex)]
    for x in xs:
        hs.append(lam * hs[-1] + B @ np.asarray(x, dtype=float))
    adj = np.asarray(g, dtype=complex).copy()
    glam = np.zeros(n, dtype=complex)
    gB = np.zeros_like(B)
    for t in range(len(xs) - 1, -1, -1):
        x = np.asarray(xs[t], dtype=float)
        for i in range(n):
            glam[i] += adj[i] * np.conj(hs[t][i])
            for j in range(len(x)):
                gB[i, j] += adj[i] * x[j]
        adj = np.conj(lam) * adj
    return {"lam": glam, "B_in": gB, "h0": adj}


def rflo_tau_trace_loops(W, tau, xs, h0=None):
    """The RFLO time-constant trace by scalar recursion (``dt = 1``).

    ``J[i] <- J[i] (1 - 1/tau_i) + (h_i - phi(W xi)_i) / tau_i^2``.
    Returns the list of traces after each step.
    """
    W = np.asarray(W, dtype=float)
    n = len(tau)
    h = [0.0] * n if h0 is None else [float(v) for v in h0]
    J = [0.0] * n
    out = []
    for x in xs:
        xi = list(x) + h + [1.0]
        phi = [math.tanh(sum(W[i, j] * xi[j] for j in range(len(xi)))) for i in range(n)]
        J = [J[i] * (1.0 - 1.0 / tau[i]) + (h[i] - phi[i]) / tau[i] ** 2 for i in range(n)]
        h = [h[i] + (phi[i] - h[i]) / tau[i] for i in range(n)]
        out.append(np.array(J))
    return out


def mrp_value_solver(P, r, gamma):
    """Solve ``v = r + gamma P v`` directly."""
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
        raise ValueError("P must be a row-stochastic square matrix")
    A = np.eye(len(r)) - gamma * P
    if abs(np.linalg.det(A)) < 1e-14:
        raise np.linalg.LinAlgError("singular Bellman system")
    return np.linalg.solve(A, r)


def adam_reference(x0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar-by-scalar Adam over a sequence of gradient arrays."""
    x = [float(v) for v in np.ravel(x0)]
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    for t, g in enumerate(grads, start=1):
        g = [float(c) for c in np.ravel(g)]
        for i in range(len(x)):
            m[i] = beta1 * m[i] + (1 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i]
            mh = m[i] / (1 - beta1 ** t)
            vh = v[i] / (1 - beta2 ** t)
            x[i] -= lr * mh / (math.sqrt(vh) + eps)
    return np.array(x).reshape(np.shape(x0))


def geometric_trace(grads, decay):
    """``e_T = sum_s decay^(T-s) g_s`` by explicit summation."""
    T = len(grads)
    total = np.zeros_like(np.asarray(grads[0], dtype=float))
    for s, g in enumerate(grads):
        total = total + decay ** (T - 1 - s) * np.asarray(g, dtype=float)
    return total


def literal_rtrrl(W, tau, theta_A, theta_C, B_A, B_C, env, rng, n_steps, gamma, lam_A, lam_C, lam_R,
                  alpha_A, alpha_C, alpha_R, eta_A=1.0):
    """Line-by-line transcription of the RTRRL pseudocode.

    CT-RNN body with the RFLO trace, feedback alignment, plain SGD, no
    entropy term, ``dt = 1`` and ``tau`` held fixed; Meta-RL input
    ``[o, onehot(a), r]``; episode boundaries zero ``h``, traces and ``J``.
    Returns a per-step log of ``delta``, the traces and the parameter deltas.
    """
    W, theta_A, theta_C = W.copy(), theta_A.copy(), theta_C.copy()
    n = len(tau)
    n_act = theta_A.shape[0]

    def rnn(o, a, r, h, J):
        x = np.concatenate([o, np.eye(n_act)[a] if a is not None else np.zeros(n_act), [r]])
        xi = np.concatenate([x, h, [1.0]])
        u = W @ xi
        phi = np.tanh(u)
        J_new = (1 - 1 / tau)[:, None] * J + ((1 - phi ** 2) / tau)[:, None] * xi[None, :]
        return h + (phi - h) / tau, J_new

    def reset():
        o = env.reset()
        h, J = rnn(o, None, 0.0, np.zeros(n), np.zeros_like(W))
        return h, J, np.zeros_like(theta_A), np.zeros_like(theta_C), np.zeros_like(W)

    h, J, e_A, e_C, e_R = reset()
    v = theta_C @ h
    out = []
    for _ in range(n_steps):
        logits = theta_A @ h
        p = np.exp(logits - logits.max())
        p /= p.sum()
        c = np.cumsum(p)
        a = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), n_act - 1)
        step = env.step(a)
        o, r, done = step.obs, step.reward, step.terminal
        if not done:
            h2, J2 = rnn(o, a, r, h, J)
        e_C = gamma * lam_C * e_C + h
        dlogp = -p.copy()
        dlogp[a] += 1.0
        e_A = gamma * lam_A * e_A + np.outer(dlogp, h)
        g_C = B_C @ np.ones(1)
        g_A = B_A @ dlogp
        e_R = gamma * lam_R * e_R + J * (g_C + eta_A * g_A)[:, None]
        v2 = 0.0 if done else theta_C @ h2
        delta = r + gamma * v2 - v
        dC, dA, dR = alpha_C * delta * e_C, alpha_A * delta * e_A, alpha_R * delta * e_R
        theta_C = theta_C + dC
        theta_A = theta_A + dA
        W = W + dR
        out.append({"delta": delta, "e_A": e_A.copy(), "e_C": e_C.copy(), "e_R": e_R.copy(),
                    "d_theta_A": dA, "d_theta_C": dC, "d_W": dR, "action": a})
        if done:
            h, J, e_A, e_C, e_R = reset()
            v = theta_C @ h
        else:
            v, h, J = v2, h2, J2
    return out
