"""Online recurrent actor-critic trained from a single interaction stream.

A recurrent body (CT-RNN or LRU) carries forward-mode gradient traces
(RTRL, RFLO, diagonal RTRL) that are combined with TD(lambda) eligibility
traces, so every parameter updates at every step without backpropagation
through time.
"""

from .agent import Agent, RunResult, evaluate, train
from .config import TrainConfig, load_config
from .envs import make_env

__all__ = ["Agent", "RunResult", "TrainConfig", "evaluate", "load_config", "make_env", "train"]
__version__ = "0.1.0"
