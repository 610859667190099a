"""Compiled single-step update for the CT-RNN / RFLO / categorical agent.

:meth:`rtrrl.agent.Agent.observe` spends most of its time in numpy call
overhead on small arrays. For the most common configuration this module fuses
the whole learning step into one numba kernel that works in place on the
agent's arrays. It performs the same arithmetic as the reference path; results
agree to rounding (reductions are summed in a different order), which the
test-suite checks. Unsupported configurations, or a missing numba, fall back
to the reference path.
"""

from __future__ import annotations

import math

import numpy as np

from .online_grad import RfloTrace

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

__all__ = ["FastStep", "available", "supports"]

# order of blocks in the norm / Adam-step arrays
BLOCKS = ("theta_C", "theta_A", "W", "rho")


def available() -> bool:
    return numba is not None


def supports(config, spec) -> bool:
    return (available() and config.backend in ("auto", "numba") and config.cell == "ctrnn"
            and config.mode == "rflo" and spec.discrete and config.update_period == 1
            and config.optimizer in ("adam", "sgd"))


def _kernel(W, tau, rho, h, v, J_W, J_tau, x_next, skip_next,
            theta_A, theta_C, B_A, B_C, e_A, e_C, eR_W, eR_tau,
            m_all, v_all, offsets, t_adam, action, reward, terminal, hp, flags,
            h_out, JW_out, Jtau_out, norms):
    gamma, lam_A, lam_C, lam_R = hp[0], hp[1], hp[2], hp[3]
    eta_A, eta_H, lr_A, lr_C, lr_R = hp[4], hp[5], hp[6], hp[7], hp[8]
    clip, beta1, beta2, eps, dt = hp[9], hp[10], hp[11], hp[12], hp[13]
    k, use_fa, train_tau, use_adam = flags[0], flags[1] != 0, flags[2] != 0, flags[3] != 0
    m0, v0 = m_all[offsets[0]:offsets[1]], v_all[offsets[0]:offsets[1]]
    m1, v1 = m_all[offsets[1]:offsets[2]], v_all[offsets[1]:offsets[2]]
    m2, v2 = m_all[offsets[2]:offsets[3]], v_all[offsets[2]:offsets[3]]
    m3, v3 = m_all[offsets[3]:offsets[4]], v_all[offsets[3]:offsets[4]]
    n, z = W.shape
    n_act = theta_A.shape[0]
    n_in = z - n - 1

    # next hidden state and trace from the old parameters
    if not skip_next:
        hh = h.copy()
        xi = np.empty(z)
        JW_out[:, :] = J_W
        Jtau_out[:] = J_tau
        for _ in range(k):
            for j in range(n_in):
                xi[j] = x_next[j]
            for j in range(n):
                xi[n_in + j] = hh[j]
            xi[z - 1] = 1.0
            for i in range(n):
                u = 0.0
                for j in range(z):
                    u += W[i, j] * xi[j]
                act = math.tanh(u)
                a = dt / tau[i]
                decay = 1.0 - a
                ad = a * (1.0 - act * act)
                for j in range(z):
                    JW_out[i, j] = decay * JW_out[i, j] + ad * xi[j]
                Jtau_out[i] = decay * Jtau_out[i] + dt * (hh[i] - act) / tau[i] ** 2
                h_out[i] = hh[i] + a * (act - hh[i])
            hh[:] = h_out

    # policy at the current state
    logits = np.empty(n_act)
    for a_ in range(n_act):
        s = 0.0
        for i in range(n):
            s += theta_A[a_, i] * h[i]
        logits[a_] = s
    mx = logits.max()
    zsum = 0.0
    for a_ in range(n_act):
        zsum += math.exp(logits[a_] - mx)
    logz = math.log(zsum)
    p = np.empty(n_act)
    logp = np.empty(n_act)
    for a_ in range(n_act):
        logp[a_] = logits[a_] - mx - logz
        p[a_] = math.exp(logits[a_] - mx) / zsum
    dlogp = -p
    dlogp[action] += 1.0
    H = 0.0
    for a_ in range(n_act):
        H -= p[a_] * logp[a_]
    dH = np.empty(n_act)
    for a_ in range(n_act):
        dH[a_] = -p[a_] * (logp[a_] + H)

    # feedback signals at the features
    g = np.empty(n)
    gH = np.empty(n)
    for i in range(n):
        if use_fa:
            gc = B_C[i, 0]
            ga = 0.0
            gh = 0.0
            for a_ in range(n_act):
                ga += B_A[i, a_] * dlogp[a_]
                gh += B_A[i, a_] * dH[a_]
        else:
            gc = theta_C[i]
            ga = 0.0
            gh = 0.0
            for a_ in range(n_act):
                ga += theta_A[a_, i] * dlogp[a_]
                gh += theta_A[a_, i] * dH[a_]
        g[i] = gc + eta_A * ga
        gH[i] = eta_H * gh

    # eligibility traces
    dC = gamma * lam_C
    dA = gamma * lam_A
    dR = gamma * lam_R
    for i in range(n):
        e_C[i] = dC * e_C[i] + h[i]
    for a_ in range(n_act):
        for i in range(n):
            e_A[a_, i] = dA * e_A[a_, i] + dlogp[a_] * h[i]
    for i in range(n):
        for j in range(z):
            eR_W[i, j] = dR * eR_W[i, j] + g[i] * J_W[i, j]
        if train_tau:
            eR_tau[i] = dR * eR_tau[i] + g[i] * J_tau[i]

    # TD error: v is carried over from the previous step, v_next uses the
    # pre-update critic
    v_next = 0.0
    if not skip_next:
        for i in range(n):
            v_next += theta_C[i] * h_out[i]
    if terminal:
        delta = reward - v
    else:
        delta = reward + gamma * v_next - v

    # ascent directions (the RNN ones use the pre-update heads)
    d_C = delta * e_C
    d_A = delta * e_A
    if eta_H != 0.0:
        for a_ in range(n_act):
            for i in range(n):
                d_A[a_, i] += eta_H * (dH[a_] * h[i])
    d_W = delta * eR_W
    d_rho = np.zeros(n)
    if eta_H != 0.0:
        for i in range(n):
            for j in range(z):
                d_W[i, j] += gH[i] * J_W[i, j]
    if train_tau:
        for i in range(n):
            dtau = delta * eR_tau[i]
            if eta_H != 0.0:
                dtau += gH[i] * J_tau[i]
            d_rho[i] = dtau / (1.0 + math.exp(-rho[i]))

    _apply(theta_C.ravel(), d_C.ravel(), lr_C, 0, clip, use_adam, m0, v0, t_adam, beta1, beta2, eps, norms)
    _apply(theta_A.ravel(), d_A.ravel(), lr_A, 1, clip, use_adam, m1, v1, t_adam, beta1, beta2, eps, norms)
    if lr_R != 0.0:
        _apply(W.ravel(), d_W.ravel(), lr_R, 2, clip, use_adam, m2, v2, t_adam, beta1, beta2, eps, norms)
        if train_tau:
            _apply(rho, d_rho, lr_R, 3, clip, use_adam, m3, v3, t_adam, beta1, beta2, eps, norms)
            for i in range(n):
                r = rho[i]
                # 1 + logaddexp(0, r)
                if r > 0.0:
                    tau[i] = 1.0 + (r + math.log1p(math.exp(-r)))
                else:
                    tau[i] = 1.0 + math.log1p(math.exp(r))
    return delta, H, v_next


def _apply(param, d, lr, slot, clip, use_adam, m, v, t_adam, beta1, beta2, eps, norms):
    """Clip ``-d`` by norm and take one optimiser step on ``param`` in place."""
    size = param.shape[0]
    sq = 0.0
    for i in range(size):
        sq += d[i] * d[i]
    norm = math.sqrt(sq)
    norms[slot] = norm
    if not math.isfinite(norm) or lr == 0.0:
        return
    scale = 1.0
    if clip > 0.0 and norm > clip:
        scale = clip / norm
    if not use_adam:
        for i in range(size):
            param[i] -= lr * (-d[i] * scale)
        return
    t = t_adam[slot] + 1
    t_adam[slot] = t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(size):
        gi = -d[i] * scale
        m[i] = m[i] * beta1 + (1.0 - beta1) * gi
        v[i] = v[i] * beta2 + (1.0 - beta2) * (gi * gi)
        upd = m[i] / c1
        upd *= lr
        upd /= math.sqrt(v[i] / c2) + eps
        param[i] -= upd


if numba is not None:
    _apply = numba.njit(cache=True)(_apply)
    _kernel = numba.njit(cache=True)(_kernel)


class FastStep:
    """Binds an :class:`~rtrrl.agent.Agent` to the compiled kernel.

    The Adam moments live in two flat buffers owned here; the optimiser's
    per-block state holds reshaped views of them, so ``state_dict`` keeps
    working.
    """

    def __init__(self, agent):
        self.agent = agent
        cfg = agent.config
        self.norms = np.zeros(4)
        self.t_adam = np.zeros(4, dtype=np.int64)
        n, z = agent.body.params.W.shape
        self._h_out = np.zeros(n)
        self._JW_out = np.zeros((n, z))
        self._Jtau_out = np.zeros(n)
        self._empty = np.zeros(0)
        self._no_rho = np.zeros(n)
        self.hp = np.array([cfg.gamma, cfg.lambda_actor, cfg.lambda_critic, cfg.lambda_rnn,
                            cfg.eta_actor, cfg.eta_entropy, cfg.lr_actor, cfg.lr_critic, cfg.lr_rnn,
                            float(cfg.clip or 0.0), 0.9, 0.999, 1e-8, agent.body.params.dt])
        self.use_adam = agent.optimizer.name == "adam"
        if self.use_adam:
            opt = agent.optimizer
            self.hp[10:13] = (opt.beta1, opt.beta2, opt.eps)
        self.flags = np.array([agent.body.params.k, cfg.feedback == "fa", agent.body.train_tau,
                               self.use_adam], dtype=np.int64)
        self._bound = None

    def _bind(self):
        """(Re)attach to the agent's current arrays; they are updated in place."""
        agent = self.agent
        body, heads = agent.body, agent.heads
        p = body.params
        for obj, name in ((p, "W"), (p, "tau"), (heads, "theta_A"), (heads, "theta_C")):
            arr = getattr(obj, name)
            if not (arr.flags.c_contiguous and arr.flags.writeable and arr.flags.owndata):
                setattr(obj, name, np.array(arr, dtype=float, order="C"))
        if body.train_tau and not body.rho.flags.owndata:
            body.rho = np.array(body.rho, dtype=float, order="C")
        blocks = [heads.theta_C, heads.theta_A, p.W, body.rho if body.train_tau else self._empty]
        sizes = [b.size for b in blocks]
        self.offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        self.m_all = np.zeros(self.offsets[-1])
        self.v_all = np.zeros(self.offsets[-1])
        lrs = (self.hp[7], self.hp[6], self.hp[8], self.hp[8])
        if self.use_adam:
            opt = agent.optimizer
            for i, key in enumerate(BLOCKS):
                # blocks that never step get no optimiser state, as in the reference path
                if sizes[i] == 0 or (lrs[i] == 0.0 and key not in opt.state):
                    continue
                a, b = self.offsets[i], self.offsets[i + 1]
                m = self.m_all[a:b].reshape(blocks[i].shape)
                v = self.v_all[a:b].reshape(blocks[i].shape)
                if key in opt.state:
                    m[...] = opt.state[key][0]
                    v[...] = opt.state[key][1]
                    self.t_adam[i] = opt.state[key][2]
                else:
                    self.t_adam[i] = 0
                opt.state[key] = [m, v, int(self.t_adam[i])]
        self._stateful = [key for key in BLOCKS if key in agent.optimizer.state]
        self._bound = (p.W, p.tau, body.rho, heads.theta_A, heads.theta_C, agent.optimizer.state)

    def _is_bound(self):
        agent = self.agent
        b = self._bound
        p, heads = agent.body.params, agent.heads
        return (b is not None and b[0] is p.W and b[1] is p.tau and b[2] is agent.body.rho
                and b[3] is heads.theta_A and b[4] is heads.theta_C and b[5] is agent.optimizer.state
                and all(b[5][key][0].base is self.m_all for key in self._stateful))

    def observe(self, action, x_next, reward, terminal, skip_next, step):
        """Run the fused update.

        Returns ``(delta, entropy, grad_norms, v_next, h_next, J_next)``; the
        last two are ``None`` when ``skip_next`` is set.
        """
        if not self._is_bound():
            self._bind()
        agent = self.agent
        cfg = agent.config
        body = agent.body
        p = body.params
        tr = agent.traces
        heads = agent.heads
        lr_R = cfg.lr_rnn
        if cfg.lr_decay:
            lr_R *= math.exp(-cfg.lr_decay * step)
            self.hp[8] = lr_R
        J = agent.J
        delta, H, v_next = _kernel(
            p.W, p.tau, body.rho if body.train_tau else self._no_rho, agent.h, float(agent.v),
            J.W, J.tau, self._empty if x_next is None else x_next, bool(skip_next),
            heads.theta_A, heads.theta_C, heads.B_A, heads.B_C, tr.e_A, tr.e_C, tr.e_R["W"],
            tr.e_R.get("tau", self._no_rho), self.m_all, self.v_all, self.offsets, self.t_adam,
            int(action), float(reward), bool(terminal), self.hp, self.flags,
            self._h_out, self._JW_out, self._Jtau_out, self.norms)
        nrm = self.norms
        if self.use_adam:
            st = agent.optimizer.state
            for key in self._stateful:
                st[key][2] = int(self.t_adam[BLOCKS.index(key)])
        norms = {"theta_C": float(nrm[0]), "theta_A": float(nrm[1])}
        if lr_R != 0.0:
            norms["W"] = float(nrm[2])
            if body.train_tau:
                norms["rho"] = float(nrm[3])
        if skip_next:
            return delta, H, norms, v_next, None, None
        return delta, H, norms, v_next, self._h_out.copy(), RfloTrace(self._JW_out.copy(), self._Jtau_out.copy())
