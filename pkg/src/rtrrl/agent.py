"""The online actor-critic loop over a recurrent body.

One call to :meth:`Agent.observe` performs, in order: recurrent step on the new
input, eligibility-trace accumulation (using the trace of the state that chose
the action), value of the new state, TD error, parameter updates, and the shift
``(v, h, J) <- (v', h', J')``.
"""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .actor_critic import (
    EligibilityTraces,
    HeadParams,
    accumulate_traces,
    apply_updates,
    entropy_and_grad,
    init_heads,
    policy_forward,
    route_feedback,
    td_error,
    value_forward,
)
from .cells import (
    CtRnnParams,
    LruParams,
    ctrnn_step,
    init_ctrnn,
    init_lru,
    lru_output,
    lru_step,
    rho_from_tau,
    tau_from_rho,
)
from . import fast
from .config import TrainConfig
from .envs import AutoReset, EnvSpec, make_env
from .errors import ConfigError, NumericFault
from .online_grad import apply_feedback, lru_rtrl_step, rflo_step, rtrl_step, zero_trace
from .optim import make_optimizer

log = logging.getLogger(__name__)

__all__ = [
    "Agent",
    "RunResult",
    "episode_boundary",
    "evaluate",
    "substream",
    "train",
]


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named purpose (``env``, ``init``, ``policy``...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *extra])


class RunningNorm:
    """Running mean/variance standardisation (Welford)."""

    def __init__(self, dim):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def __call__(self, x):
        if self.count < 2:
            return x - self.mean
        return (x - self.mean) / np.sqrt(self.m2 / (self.count - 1) + 1e-8)


class CtRnnBody:
    """CT-RNN body; trains ``W`` and (optionally) ``tau`` through ``rho``."""

    kind = "ctrnn"

    def __init__(self, params: CtRnnParams, mode: str, train_tau: bool = True):
        self.params = params
        self.mode = mode
        self.train_tau = train_tau
        self.rho = rho_from_tau(params.tau) if train_tau else None
        self._engine = rtrl_step if mode == "rtrl" else rflo_step

    @property
    def n_features(self):
        return self.params.n_hidden

    def grad_blocks(self):
        p = self.params
        return {"W": p.W, "tau": p.tau} if self.train_tau else {"W": p.W}

    def zero_state(self):
        return np.zeros(self.params.n_hidden)

    def zero_trace(self):
        return zero_trace(self.params, self.mode)

    def forward(self, h, x, step=None):
        h, _ = ctrnn_step(self.params, h, x, step=step)
        return h, h

    def step(self, h, x, J, step=None):
        h, J = self._engine(self.params, h, x, J, step=step)
        return h, J, h

    def contract(self, J, g, h=None, x=None):
        grads = apply_feedback(J, g)
        if not self.train_tau:
            del grads["tau"]
        return grads

    def update(self, directions, lr, optimizer, clip, step=None):
        blocks = {"W": self.params.W}
        dirs = {"W": directions["W"]}
        if self.train_tau:
            # d tau / d rho = sigmoid(rho)
            blocks["rho"] = self.rho
            dirs["rho"] = directions["tau"] / (1.0 + np.exp(-self.rho))
        new, norms = apply_updates(blocks, dirs, {k: lr for k in blocks}, optimizer, clip, step)
        self.params.W = new["W"]
        if self.train_tau:
            self.rho = new["rho"]
            self.params.tau = tau_from_rho(self.rho)
        return norms

    def state_dict(self):
        out = {"rnn.W": self.params.W, "rnn.tau": self.params.tau}
        if self.train_tau:
            out["rnn.rho"] = self.rho
        return out

    def load_state_dict(self, state):
        self.params = CtRnnParams(np.array(state["rnn.W"]), np.array(state["rnn.tau"]), self.params.dt)
        if self.train_tau:
            self.rho = np.array(state["rnn.rho"])


class LruBody:
    """LRU body; ``lam`` and ``B_in`` through diagonal RTRL, readout locally."""

    kind = "lru"
    mode = "diag_rtrl"

    def __init__(self, params: LruParams, max_modulus: float = 0.9999):
        self.params = params
        self.max_modulus = max_modulus

    @property
    def n_features(self):
        return self.params.n_output

    def grad_blocks(self):
        p = self.params
        return {"lam": p.lam, "B_in": p.B_in, "C_out": p.C_out, "D_skip": p.D_skip}

    def zero_state(self):
        return np.zeros(self.params.n_hidden, dtype=complex)

    def zero_trace(self):
        return zero_trace(self.params, "diag_rtrl")

    def forward(self, h, x, step=None):
        h = lru_step(self.params, h, x, step=step)
        return h, lru_output(self.params, h, x)

    def step(self, h, x, J, step=None):
        h, J = lru_rtrl_step(self.params, h, x, J, step=step)
        return h, J, lru_output(self.params, h, x)

    def contract(self, J, g, h=None, x=None):
        """Feature-space error ``g`` -> gradients of every LRU block.

        The readout is real, ``y = Re[C h] + D x``, so the error at ``h`` in the
        ``dRe + 1j dIm`` convention is ``conj(C).T @ g``.
        """
        C = self.params.C_out
        grads = apply_feedback(J, np.conj(C).T @ g)
        grads["C_out"] = np.outer(g, np.conj(h))
        grads["D_skip"] = np.outer(g, x)
        return grads

    def update(self, directions, lr, optimizer, clip, step=None):
        blocks = self.grad_blocks()
        new, norms = apply_updates(blocks, directions, {k: lr for k in blocks}, optimizer, clip, step)
        lam = new["lam"]
        mod = np.abs(lam)
        over = mod > self.max_modulus
        if np.any(over):
            lam = lam.copy()
            lam[over] *= self.max_modulus / mod[over]
        self.params = LruParams(lam, new["B_in"], new["C_out"], new["D_skip"])
        return norms

    def state_dict(self):
        p = self.params
        return {"rnn.lam": p.lam, "rnn.B_in": p.B_in, "rnn.C_out": p.C_out, "rnn.D_skip": p.D_skip}

    def load_state_dict(self, state):
        self.params = LruParams(*(np.array(state[f"rnn.{k}"]) for k in ("lam", "B_in", "C_out", "D_skip")))


@dataclass
class StepInfo:
    delta: float
    entropy: float
    terminal: bool
    grad_norms: dict = field(default_factory=dict)


class Agent:
    """Recurrent actor-critic trained online from a single stream.

    ``h`` is the state that picks the next action, ``J`` its Jacobian trace,
    ``feat`` the features read by the heads and ``v`` their value.
    """

    def __init__(self, config: TrainConfig, spec: EnvSpec, rng: np.random.Generator | None = None):
        self.config = config
        self.spec = spec
        rng = substream(config.seed, "init") if rng is None else rng
        if spec.discrete:
            self.n_act = spec.n_actions
            kind = "categorical"
        else:
            self.n_act = spec.action_dim
            kind = "gaussian"
        self.input_dim = spec.obs_dim + (self.n_act + 1 if config.meta_rl else 0)
        if config.cell == "ctrnn":
            params = init_ctrnn(rng, self.input_dim, config.hidden, config.dt,
                                (config.tau_min, config.tau_max))
            self.body = CtRnnBody(params, config.mode, config.train_tau)
        else:
            params = init_lru(rng, self.input_dim, config.hidden, config.hidden,
                              r_min=config.lru_r_min, r_max=config.lru_r_max)
            self.body = LruBody(params, config.lru_max_modulus)
        self.heads = init_heads(rng, self.body.n_features, self.n_act, kind, config.head_init)
        self.optimizer = make_optimizer(config.optimizer)
        self.traces = EligibilityTraces.zeros_like(self.heads, self.body.grad_blocks())
        self.norm = RunningNorm(spec.obs_dim) if config.normalize_obs else None
        self.step_count = 0
        self.episode_count = 0
        self._pending = None
        self._pending_n = 0
        self.h = self.body.zero_state()
        self.J = self.body.zero_trace()
        self.x = np.zeros(self.input_dim)
        self.feat = np.zeros(self.body.n_features)
        self.v = 0.0
        self._fast = None
        if fast.supports(config, spec):
            self._fast = fast.FastStep(self)
        elif config.backend == "numba":
            raise ConfigError("model.backend = numba needs numba and a CT-RNN/RFLO agent with "
                              "discrete actions, update_period 1 and adam or sgd")

    # -- inputs -----------------------------------------------------------
    def env_action(self, action):
        if self.spec.discrete:
            return int(action)
        lo, hi = self.spec.action_bounds or (-1.0, 1.0)
        return lo + (np.tanh(action) + 1.0) * 0.5 * (hi - lo)

    def meta_input(self, obs, action=None, reward=0.0, update_norm=False):
        """``[obs, one-hot previous action (or raw action), previous reward]``."""
        obs = np.asarray(obs, dtype=float)
        if self.norm is not None:
            if update_norm:
                self.norm.update(obs)
            obs = self.norm(obs)
        if not self.config.meta_rl:
            return obs
        x = np.zeros(self.input_dim)
        d = self.spec.obs_dim
        x[:d] = obs
        if action is not None:
            if self.spec.discrete:
                x[d + int(action)] = 1.0
            else:
                x[d:d + self.n_act] = self.env_action(action)
        x[-1] = reward
        return x

    # -- episode handling --------------------------------------------------
    def begin_episode(self, obs):
        """Zero state, trace and eligibilities, then read ``[o, 0, 0]``."""
        self.traces.reset()
        x = self.meta_input(obs, None, 0.0, update_norm=True)
        h0 = self.body.zero_state()
        self.h, self.J, self.feat = self.body.step(h0, x, self.body.zero_trace(), step=self.step_count)
        self.x = x
        self.v = value_forward(self.heads.theta_C, self.feat)

    # -- acting ------------------------------------------------------------
    def policy(self):
        return policy_forward(self.heads, self.feat)

    def act(self, rng: np.random.Generator):
        dist = self.policy()
        eps = self.config.action_epsilon
        if eps > 0.0 and rng.random() < eps:
            if self.spec.discrete:
                return dist, int(rng.integers(self.n_act))
            return dist, rng.uniform(-1.0, 1.0, size=self.n_act)
        return dist, dist.sample(rng)

    # -- learning ----------------------------------------------------------
    def observe(self, dist, action, obs, reward, terminal) -> StepInfo:
        if self._fast is not None:
            return self._observe_fast(action, obs, reward, terminal)
        cfg = self.config
        heads = self.heads
        step = self.step_count
        # recurrent step on the new input; skipped on terminal transitions
        # because the next state is replaced by the reset state
        if terminal and cfg.reset_on_terminal:
            h_next = J_next = feat_next = x_next = None
        else:
            x_next = self.meta_input(obs, action, reward, update_norm=True)
            h_next, J_next, feat_next = self.body.step(self.h, x_next, self.J, step=step)

        # eligibility traces, all w.r.t. the state that chose the action
        if heads.kind == "categorical":
            dlogp = dist.grad_log_prob(action)
            dlog_std = None
        else:
            dlogp, dlog_std = dist.grad_log_prob(action)
        g_C, g_A = route_feedback(cfg.feedback, heads, dlogp)
        contract = lambda J, g: self.body.contract(J, g, self.h, self.x)  # noqa: E731
        self.traces = accumulate_traces(
            self.traces, self.feat, np.outer(dlogp, self.feat), self.J, g_C, g_A,
            cfg.gamma, cfg.lambda_actor, cfg.lambda_critic, cfg.lambda_rnn, cfg.eta_actor,
            contract=contract, grad_log_std=dlog_std)

        v_next = 0.0 if feat_next is None else value_forward(heads.theta_C, feat_next)
        delta = td_error(reward, cfg.gamma, self.v, v_next, terminal)
        if not math.isfinite(delta):
            raise NumericFault("non-finite TD error", step=step)

        H, dH = entropy_and_grad(dist)
        norms = self._update(delta, dH, step)
        return self._advance(delta, H, norms, terminal, obs, v_next, h_next, J_next, feat_next, x_next)

    def _observe_fast(self, action, obs, reward, terminal) -> StepInfo:
        step = self.step_count
        skip = terminal and self.config.reset_on_terminal
        x_next = None if skip else self.meta_input(obs, action, reward, update_norm=True)
        delta, H, norms, v_next, h_next, J_next = self._fast.observe(
            action, x_next, reward, terminal, skip, step)
        if not math.isfinite(delta):
            raise NumericFault("non-finite TD error", step=step)
        for k, v in norms.items():
            if not math.isfinite(v):
                raise NumericFault("non-finite parameter update", step=step, block=k)
        if h_next is not None and not np.isfinite(h_next.sum() + J_next.W.sum() + J_next.tau.sum()):
            raise NumericFault("non-finite CT-RNN state or trace", step=step)
        return self._advance(delta, H, norms, terminal, obs, v_next, h_next, J_next, h_next, x_next)

    def _advance(self, delta, H, norms, terminal, obs, v_next, h_next, J_next, feat_next, x_next):
        cfg = self.config
        self.step_count += 1
        if terminal:
            self.episode_count += 1
            if cfg.reset_on_terminal:
                episode_boundary(self, obs)
                return StepInfo(delta, H, True, norms)
        self.v, self.h, self.J, self.feat, self.x = v_next, h_next, J_next, feat_next, x_next
        return StepInfo(delta, H, terminal, norms)

    def _update(self, delta, dH, step):
        cfg, heads, tr = self.config, self.heads, self.traces
        eta_H = cfg.eta_entropy
        if heads.kind == "categorical":
            dH_out, dH_log_std = dH, None
        else:
            dH_out, dH_log_std = dH
        head_params = {"theta_C": heads.theta_C, "theta_A": heads.theta_A}
        dirs = {"theta_C": delta * tr.e_C, "theta_A": delta * tr.e_A}
        lrs = {"theta_C": cfg.lr_critic, "theta_A": cfg.lr_actor}
        if eta_H:
            dirs["theta_A"] = dirs["theta_A"] + eta_H * np.outer(dH_out, self.feat)
        if heads.log_std is not None:
            head_params["log_std"] = heads.log_std
            dirs["log_std"] = delta * tr.e_log_std + eta_H * dH_log_std
            lrs["log_std"] = cfg.lr_actor

        # the RNN direction uses the pre-update heads
        rnn_dirs = {k: delta * e for k, e in tr.e_R.items()}
        if eta_H:
            if cfg.feedback == "fa":
                g_H = heads.B_A @ dH_out
            else:
                g_H = heads.theta_A.T @ dH_out
            ent = self.body.contract(self.J, eta_H * g_H, self.h, self.x)
            for k in rnn_dirs:
                rnn_dirs[k] = rnn_dirs[k] + ent[k]

        new, norms = apply_updates(head_params, dirs, lrs, self.optimizer, cfg.clip, step)
        heads.theta_C, heads.theta_A = new["theta_C"], new["theta_A"]
        if "log_std" in new:
            heads.log_std = new["log_std"]

        if cfg.update_period > 1:
            if self._pending is None:
                self._pending = {k: np.zeros_like(v) for k, v in rnn_dirs.items()}
            for k, d in rnn_dirs.items():
                self._pending[k] += d
            self._pending_n += 1
            if self._pending_n < cfg.update_period:
                return norms
            rnn_dirs, self._pending, self._pending_n = self._pending, None, 0

        lr_R = cfg.lr_rnn
        if cfg.lr_decay:
            lr_R *= math.exp(-cfg.lr_decay * step)
        if lr_R != 0.0:
            norms.update(self.body.update(rnn_dirs, lr_R, self.optimizer, cfg.clip, step))
        return norms

    # -- persistence -------------------------------------------------------
    def state_dict(self) -> dict:
        out = dict(self.body.state_dict())
        out["head.theta_A"] = self.heads.theta_A
        out["head.theta_C"] = self.heads.theta_C
        out["head.B_A"] = self.heads.B_A
        out["head.B_C"] = self.heads.B_C
        if self.heads.log_std is not None:
            out["head.log_std"] = self.heads.log_std
        if self.norm is not None:
            out["norm.count"] = np.array(self.norm.count)
            out["norm.mean"] = self.norm.mean
            out["norm.m2"] = self.norm.m2
        return {k: np.array(v, copy=True) for k, v in out.items()}

    def load_state_dict(self, state: dict):
        try:
            self.body.load_state_dict(state)
            self.heads = HeadParams(
                np.array(state["head.theta_A"]), np.array(state["head.theta_C"]),
                np.array(state["head.B_A"]), np.array(state["head.B_C"]), self.heads.kind,
                np.array(state["head.log_std"]) if "head.log_std" in state else None)
        except KeyError as exc:
            raise ConfigError(f"snapshot is missing tensor {exc}") from None
        if self.norm is not None and "norm.mean" in state:
            self.norm.count = int(state["norm.count"])
            self.norm.mean = np.array(state["norm.mean"])
            self.norm.m2 = np.array(state["norm.m2"])
        self.traces = EligibilityTraces.zeros_like(self.heads, self.body.grad_blocks())


def episode_boundary(agent: Agent, obs):
    """Reset ``h``, ``J`` and eligibilities; optimiser state is kept."""
    agent.begin_episode(obs)
    return agent


def evaluate(agent: Agent, env, eval_steps: int = 10_000) -> float:
    """Frozen-parameter rollout with mode actions; mean episodic reward.

    The hidden state is carried within an episode and reset at boundaries. If
    no episode finishes within ``eval_steps`` the partial return counts as one
    episode.
    """
    body, heads = agent.body, agent.heads
    obs = env.reset()
    h = body.zero_state()
    x = agent.meta_input(obs)
    h, feat = body.forward(h, x)
    returns, running = [], 0.0
    for _ in range(eval_steps):
        dist = policy_forward(heads, feat)
        a = dist.mode()
        out = env.step(agent.env_action(a))
        running += out.reward
        if out.terminal:
            returns.append(running)
            running = 0.0
            obs = env.reset()
            h = body.zero_state()
            x = agent.meta_input(obs)
        else:
            x = agent.meta_input(out.obs, a, out.reward)
        h, feat = body.forward(h, x)
    if not returns:
        returns.append(running)
    return float(np.mean(returns))


@dataclass
class RunResult:
    agent: Agent
    best_eval: float
    best_state: dict
    eval_history: list
    steps: int
    episodes: int
    stop_reason: str
    records: list = field(default_factory=list)


class _Window:
    def __init__(self):
        self.n = 0
        self.abs_delta = 0.0
        self.entropy = 0.0
        self.returns = []
        self.norms = {}

    def add(self, info: StepInfo):
        self.n += 1
        self.abs_delta += abs(info.delta)
        self.entropy += info.entropy
        for k, v in info.grad_norms.items():
            self.norms[k] = self.norms.get(k, 0.0) + v


def train(config: TrainConfig, sink=None, env=None, record_wall_time: bool = False) -> RunResult:
    """Run the online loop until ``max_steps``, patience, or ``target_reward``.

    One epoch is ``epoch_steps`` environment steps followed by an evaluation
    on a freshly seeded copy of the environment.
    """
    from .metrics import MetricRecord  # local import keeps agent importable standalone

    run_id = f"{config.env}-s{config.seed}"
    if env is None:
        env = make_env(config.env, substream(config.seed, "env"), **config.env_params)
    stream = AutoReset(env)
    agent = Agent(config, env.spec)
    policy_rng = substream(config.seed, "policy")
    t0 = time.perf_counter()

    def wall():
        return round(time.perf_counter() - t0, 3) if record_wall_time else None

    agent.begin_episode(stream.reset())
    best, best_state, since_best = -math.inf, agent.state_dict(), 0
    history, records = [], []
    window = _Window()
    epoch = 0
    reason = "max_steps"

    def emit(rec):
        records.append(rec)
        if sink is not None:
            sink.write(rec)

    def flush_window(eval_reward=None):
        nonlocal window
        n = max(window.n, 1)
        emit(MetricRecord(
            run_id=run_id, step=agent.step_count, episode=agent.episode_count,
            episodic_reward=float(np.mean(window.returns)) if window.returns else None,
            eval_reward=eval_reward,
            delta_mean_abs=window.abs_delta / n, entropy=window.entropy / n,
            grad_norms={k: v / n for k, v in sorted(window.norms.items())},
            wall_time=wall()))
        window = _Window()

    while agent.step_count < config.max_steps:
        epoch_end = min(agent.step_count + config.epoch_steps, config.max_steps)
        while agent.step_count < epoch_end:
            dist, a = agent.act(policy_rng)
            out = stream.step(agent.env_action(a))
            info = agent.observe(dist, a, out.obs, out.reward, out.terminal)
            window.add(info)
            if out.terminal:
                window.returns.append(stream.episode_return)
            if agent.step_count % config.log_interval == 0 and agent.step_count != epoch_end:
                flush_window()
        eval_env = make_env(config.env, substream(config.seed, "eval", epoch), **config.env_params)
        score = evaluate(agent, eval_env, config.eval_steps)
        history.append((agent.step_count, score))
        flush_window(eval_reward=score)
        log.info("%s step %d eval %.4f", run_id, agent.step_count, score)
        epoch += 1
        if score > best:
            best, best_state, since_best = score, agent.state_dict(), 0
        else:
            since_best += 1
        if config.target_reward is not None and best >= config.target_reward:
            reason = "target_reward"
            break
        if since_best >= config.patience:
            reason = "patience"
            break
    return RunResult(agent, best, best_state, history, agent.step_count, agent.episode_count,
                     reason, records)
