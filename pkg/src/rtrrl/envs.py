"""Small seeded POMDP environments with a common reset/step protocol.

Every environment takes a ``numpy.random.Generator`` at construction, must be
``reset()`` before stepping, and refuses ``step()`` after a terminal
transition until reset again. ``AutoReset`` turns an episodic environment into
the continuing stream the training loop consumes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError

__all__ = [
    "AutoReset",
    "BernoulliBandit",
    "CartPoleMasked",
    "DeepSea",
    "EnvSpec",
    "EnvStep",
    "MemoryChain",
    "RepeatPrevious",
    "TwoStateChain",
    "UmbrellaChain",
    "make_env",
    "parse_env_name",
    "register",
    "registry",
]


@dataclass
class EnvStep:
    obs: np.ndarray
    reward: float
    terminal: bool


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    n_actions: int | None = None       # discrete action count
    action_dim: int | None = None      # continuous action dimension
    action_bounds: tuple | None = None
    max_episode_steps: int = 1000
    reward_bound: float = 1.0          # |per-step reward| never exceeds this

    @property
    def discrete(self) -> bool:
        return self.n_actions is not None


class Env:
    spec: EnvSpec

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._needs_reset = True
        self.t = 0

    def reset(self) -> np.ndarray:
        self._needs_reset = False
        self.t = 0
        return self._reset()

    def step(self, action) -> EnvStep:
        if self._needs_reset:
            raise ProtocolError(f"{type(self).__name__}.step() called before reset() "
                                "or after a terminal transition")
        if self.spec.discrete and not 0 <= int(action) < self.spec.n_actions:
            raise ProtocolError(f"action {action!r} outside [0, {self.spec.n_actions})")
        obs, reward, terminal = self._step(action)
        self.t += 1
        if self.t >= self.spec.max_episode_steps:
            terminal = True
        if terminal:
            self._needs_reset = True
        return EnvStep(obs, float(reward), bool(terminal))

    def _reset(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


class MemoryChain(Env):
    """Remember a context bit shown at ``t = 0`` until a query at ``t = length``.

    Observation: ``[context, t / length, query]``. Two actions; at the query
    step the action is scored ``+1`` if it equals the bit and ``-1`` otherwise,
    and the episode ends. Earlier actions are ignored.
    """

    def __init__(self, rng, length: int = 4):
        super().__init__(rng)
        if length < 1:
            raise ConfigError("memory_chain length must be >= 1")
        self.length = int(length)
        self.spec = EnvSpec(obs_dim=3, n_actions=2, max_episode_steps=self.length + 1)
        self.context = 0

    def _obs(self, t):
        return np.array([
            (2.0 * self.context - 1.0) if t == 0 else 0.0,
            t / self.length,
            1.0 if t == self.length else 0.0,
        ])

    def _reset(self):
        self.context = int(self.rng.integers(2))
        return self._obs(0)

    def _step(self, action):
        if self.t == self.length:
            reward = 1.0 if int(action) == self.context else -1.0
            return np.zeros(3), reward, True
        return self._obs(self.t + 1), 0.0, False


class DeepSea(Env):
    """N x N grid descended one row per step.

    ``right`` is action 1 or 0 depending on a fixed seeded flip per column.
    Moving right costs ``0.01 / N``; finishing the last row in the rightmost
    column pays ``+1``. Observation: one-hot row stacked on one-hot column.
    """

    def __init__(self, rng, size: int = 4, randomize_actions: bool = True):
        super().__init__(rng)
        if size < 2:
            raise ConfigError("deep_sea size must be >= 2")
        self.size = int(size)
        self.spec = EnvSpec(obs_dim=2 * self.size, n_actions=2, max_episode_steps=self.size,
                            reward_bound=1.0)
        if randomize_actions:
            self.right_action = rng.integers(2, size=self.size)
        else:
            self.right_action = np.ones(self.size, dtype=int)
        self.row = self.col = 0

    def action_for(self, direction: str, col: int | None = None) -> int:
        col = self.col if col is None else col
        right = int(self.right_action[col])
        return right if direction == "right" else 1 - right

    def _obs(self):
        obs = np.zeros(2 * self.size)
        if self.row < self.size:
            obs[self.row] = 1.0
        obs[self.size + self.col] = 1.0
        return obs

    def _reset(self):
        self.row = self.col = 0
        return self._obs()

    def _step(self, action):
        reward = 0.0
        if int(action) == self.right_action[self.col]:
            reward -= 0.01 / self.size
            self.col = min(self.col + 1, self.size - 1)
        else:
            self.col = max(self.col - 1, 0)
        self.row += 1
        terminal = self.row == self.size
        if terminal and self.col == self.size - 1:
            reward += 1.0
        return self._obs(), reward, terminal


class CartPoleMasked(Env):
    """Classic cart-pole with half of the state hidden.

    ``mask="vel"`` exposes ``(x_dot, theta_dot)``, ``mask="pos"`` exposes
    ``(x, theta)``, ``mask=None`` exposes all four. ``noise`` adds Gaussian
    observation noise of that standard deviation.
    """

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    tau = 0.02
    x_threshold = 2.4
    theta_threshold = 12 * 2 * math.pi / 360

    def __init__(self, rng, mask: str | None = "vel", noise: float = 0.0, max_steps: int = 500):
        super().__init__(rng)
        if mask not in ("vel", "pos", None, "none"):
            raise ConfigError(f"unknown cartpole mask {mask!r}")
        self.mask = None if mask == "none" else mask
        self.noise = float(noise)
        obs_dim = 4 if self.mask is None else 2
        self.spec = EnvSpec(obs_dim=obs_dim, n_actions=2, max_episode_steps=int(max_steps))
        self.state = np.zeros(4)

    def _obs(self):
        x, x_dot, th, th_dot = self.state
        if self.mask == "vel":
            obs = np.array([x_dot, th_dot])
        elif self.mask == "pos":
            obs = np.array([x, th])
        else:
            obs = self.state.copy()
        if self.noise > 0:
            obs = obs + self.noise * self.rng.standard_normal(obs.shape)
        return obs

    def _reset(self):
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        return self._obs()

    @classmethod
    def dynamics(cls, state, action):
        """One explicit-Euler step of the cart-pole equations of motion."""
        x, x_dot, th, th_dot = state
        force = cls.force_mag if int(action) == 1 else -cls.force_mag
        cos, sin = math.cos(th), math.sin(th)
        total_mass = cls.masspole + cls.masscart
        pml = cls.masspole * cls.length
        temp = (force + pml * th_dot ** 2 * sin) / total_mass
        th_acc = (cls.gravity * sin - cos * temp) / (
            cls.length * (4.0 / 3.0 - cls.masspole * cos ** 2 / total_mass))
        x_acc = temp - pml * th_acc * cos / total_mass
        return np.array([
            x + cls.tau * x_dot,
            x_dot + cls.tau * x_acc,
            th + cls.tau * th_dot,
            th_dot + cls.tau * th_acc,
        ])

    def _step(self, action):
        self.state = self.dynamics(self.state, action)
        x, _, th, _ = self.state
        terminal = abs(x) > self.x_threshold or abs(th) > self.theta_threshold
        return self._obs(), 1.0, terminal


class BernoulliBandit(Env):
    """Two arms paying 1 with probabilities ``(p, 1 - p)``, ``p`` in {0.1, 0.9}.

    ``p`` is redrawn every episode. Observation: ``[previous reward, t / T]``.
    """

    def __init__(self, rng, episode_len: int = 100, probs=(0.1, 0.9)):
        super().__init__(rng)
        self.episode_len = int(episode_len)
        self.probs = tuple(float(p) for p in probs)
        self.spec = EnvSpec(obs_dim=2, n_actions=2, max_episode_steps=self.episode_len)
        self.arm_probs = np.zeros(2)

    @property
    def best_arm(self) -> int:
        return int(np.argmax(self.arm_probs))

    def _reset(self):
        p = self.probs[int(self.rng.integers(len(self.probs)))]
        self.arm_probs = np.array([p, 1.0 - p])
        return np.array([0.0, 0.0])

    def _step(self, action):
        reward = float(self.rng.random() < self.arm_probs[int(action)])
        return np.array([reward, (self.t + 1) / self.episode_len]), reward, False


class UmbrellaChain(Env):
    """The first action decides whether an umbrella is carried; the final step
    pays ``+1`` if that matched the weather shown at ``t = 0`` and ``-1``
    otherwise. Intermediate steps pay zero-mean ``+-distractor_scale`` coins.

    Observation: ``[need (t = 0 only), has_umbrella, t / T, distractor bits...]``.
    """

    def __init__(self, rng, chain_len: int = 10, n_distractor: int = 3, distractor_scale: float = 1.0):
        super().__init__(rng)
        if chain_len < 2:
            raise ConfigError("umbrella_chain chain_len must be >= 2")
        self.chain_len = int(chain_len)
        self.n_distractor = int(n_distractor)
        self.distractor_scale = float(distractor_scale)
        self.spec = EnvSpec(obs_dim=3 + self.n_distractor, n_actions=2,
                            max_episode_steps=self.chain_len,
                            reward_bound=max(1.0, self.distractor_scale))
        self.need = self.has = 0

    def _obs(self, t):
        d = self.rng.integers(2, size=self.n_distractor).astype(float)
        head = [(2.0 * self.need - 1.0) if t == 0 else 0.0, float(self.has), t / self.chain_len]
        return np.concatenate((head, d))

    def _reset(self):
        self.need = int(self.rng.integers(2))
        self.has = 0
        return self._obs(0)

    def _step(self, action):
        if self.t == 0:
            self.has = int(action)
        if self.t == self.chain_len - 1:
            reward = 1.0 if self.has == self.need else -1.0
            return self._obs(self.t + 1), reward, True
        reward = self.distractor_scale * (2.0 * self.rng.integers(2) - 1.0)
        return self._obs(self.t + 1), reward, False


class RepeatPrevious(Env):
    """Output the symbol shown ``k`` steps ago.

    Each step shows a random one-hot symbol. From step ``k`` on, the action is
    compared with the symbol from ``k`` steps earlier: ``+1 / (T - k)`` if it
    matches, ``-1 / (T - k)`` otherwise, so episodic returns lie in ``[-1, 1]``.
    """

    def __init__(self, rng, k: int = 1, n_symbols: int = 4, episode_len: int = 16):
        super().__init__(rng)
        if k < 0 or episode_len <= k:
            raise ConfigError("repeat_previous needs 0 <= k < episode_len")
        self.k, self.n_symbols, self.episode_len = int(k), int(n_symbols), int(episode_len)
        self.spec = EnvSpec(obs_dim=self.n_symbols, n_actions=self.n_symbols,
                            max_episode_steps=self.episode_len,
                            reward_bound=1.0 / (self.episode_len - self.k))
        self.symbols = []

    def _draw(self):
        s = int(self.rng.integers(self.n_symbols))
        self.symbols.append(s)
        obs = np.zeros(self.n_symbols)
        obs[s] = 1.0
        return obs

    def _reset(self):
        self.symbols = []
        return self._draw()

    def _step(self, action):
        t = self.t
        reward = 0.0
        if t >= self.k:
            scale = 1.0 / (self.episode_len - self.k)
            reward = scale if int(action) == self.symbols[t - self.k] else -scale
        terminal = t + 1 >= self.episode_len
        return self._draw(), reward, terminal


class TwoStateChain(Env):
    """A small Markov reward process exposed as an environment.

    The state is fully observed (one-hot); actions are ignored. Transition
    matrix ``P`` and per-state reward ``r`` are given; rewards are
    deterministic functions of the state being left. Never terminates.
    """

    def __init__(self, rng, P=((0.9, 0.1), (0.2, 0.8)), r=(1.0, -1.0), n_actions: int = 2,
                 max_steps: int = 10 ** 12):
        super().__init__(rng)
        self.P = np.asarray(P, dtype=float)
        self.r = np.asarray(r, dtype=float)
        n = self.P.shape[0]
        if self.P.shape != (n, n) or not np.allclose(self.P.sum(axis=1), 1.0):
            raise ConfigError("P must be a row-stochastic square matrix")
        self.spec = EnvSpec(obs_dim=n, n_actions=n_actions, max_episode_steps=int(max_steps),
                            reward_bound=float(np.abs(self.r).max()))
        self.s = 0
        self._cdf = np.cumsum(self.P, axis=1)

    def _obs(self):
        obs = np.zeros(self.P.shape[0])
        obs[self.s] = 1.0
        return obs

    def _reset(self):
        self.s = int(self.rng.integers(self.P.shape[0]))
        return self._obs()

    def _step(self, action):
        reward = self.r[self.s]
        self.s = min(int(np.searchsorted(self._cdf[self.s], self.rng.random(), side="right")),
                     self.P.shape[0] - 1)
        return self._obs(), reward, False


class AutoReset:
    """Continuing-stream view of an episodic environment.

    A terminal transition carries ``terminal=True`` and, as its observation,
    the first observation of the next episode. ``episode_return`` holds the
    return of the episode that just finished.
    """

    def __init__(self, env: Env):
        self.env = env
        self.spec = env.spec
        self.episode_return = 0.0
        self._running = 0.0

    def reset(self):
        self._running = 0.0
        return self.env.reset()

    def step(self, action) -> EnvStep:
        out = self.env.step(action)
        self._running += out.reward
        if out.terminal:
            self.episode_return = self._running
            self._running = 0.0
            out = EnvStep(self.env.reset(), out.reward, True)
        return out


_REGISTRY = {}


def register(name, factory):
    _REGISTRY[name] = factory


def registry():
    return dict(_REGISTRY)


register("memory_chain", MemoryChain)
register("deep_sea", DeepSea)
register("cartpole", CartPoleMasked)
register("cartpole_vel", lambda rng, **kw: CartPoleMasked(rng, mask="vel", **kw))
register("cartpole_pos", lambda rng, **kw: CartPoleMasked(rng, mask="pos", **kw))
register("stateless_cartpole", lambda rng, **kw: CartPoleMasked(rng, mask="pos", **kw))
register("noisy_stateless_cartpole",
         lambda rng, **kw: CartPoleMasked(rng, **{"mask": "pos", "noise": 0.1, **kw}))
register("bernoulli_bandit", BernoulliBandit)
register("umbrella_chain", UmbrellaChain)
register("repeat_previous", RepeatPrevious)
register("two_state_chain", TwoStateChain)

_NAME_RE = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*(?:\{(.*)\})?\s*$")


def _parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_env_name(name: str):
    """Split ``"memory_chain{length=16}"`` into ``("memory_chain", {"length": 16})``."""
    m = _NAME_RE.match(name)
    if not m:
        raise ConfigError(f"malformed environment name {name!r}")
    params = {}
    if m.group(2):
        for item in m.group(2).split(","):
            if not item.strip():
                continue
            if "=" not in item:
                raise ConfigError(f"malformed environment parameter {item!r} in {name!r}")
            k, v = item.split("=", 1)
            params[k.strip()] = _parse_value(v)
    return m.group(1), params


def make_env(name: str, rng, **params) -> Env:
    base, inline = parse_env_name(name)
    if base not in _REGISTRY:
        raise ConfigError(f"unknown environment {base!r}; registered: {sorted(_REGISTRY)}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    try:
        return _REGISTRY[base](rng, **{**inline, **params})
    except TypeError as exc:
        raise ConfigError(f"bad parameters for environment {base!r}: {exc}") from None
