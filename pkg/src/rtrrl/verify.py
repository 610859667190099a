"""Property checks comparing the gradient engines with the oracles.

Each check returns a :class:`CheckResult`. ``inject`` names a check whose
engine output gets perturbed before comparison, which must make exactly that
check fail (negative control for ``rtrrl verify --inject``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actor_critic import EligibilityTraces, accumulate_traces, td_error, value_forward
from .cells import CtRnnParams, LruParams, init_lru
from .online_grad import apply_feedback, lru_rtrl_step, rflo_step, rtrl_step, zero_trace
from .optim import Adam
from . import oracles

__all__ = [
    "CHECKS",
    "CheckResult",
    "check_adam",
    "check_cross_oracle",
    "check_diag_rtrl",
    "check_rflo_structure",
    "check_rtrl",
    "check_td_convergence",
    "run_checks",
    "slip_ring_mrp",
    "td_lambda_critic",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: worst={self.worst:.3e} tol={self.tolerance:.0e} {self.detail}".rstrip()


def _random_ctrnn(rng, n, i, w_scale=1.0, tau_range=(1.2, 4.0), dt=1.0):
    z = i + n + 1
    W = w_scale * rng.normal(size=(n, z)) / np.sqrt(z)
    tau = rng.uniform(*tau_range, size=n)
    return CtRnnParams(W, tau, dt)


def _instances(quick: bool):
    """The seeded CT-RNN grid: 20 instances over N, I, T (a subset if quick)."""
    grid = []
    sizes = [(n, i) for n in (2, 3, 4) for i in (1, 2)]
    horizons = (1, 5, 12)
    for seed in range(20):
        n, i = sizes[seed % len(sizes)]
        T = horizons[seed % len(horizons)]
        if quick and (n > 3 or T > 8 or seed >= 8):
            continue
        grid.append((seed, n, i, T))
    return grid


def _rtrl_grads(params, xs, g):
    h = np.zeros(params.n_hidden)
    J = zero_trace(params, "rtrl")
    for x in xs:
        h, J = rtrl_step(params, h, x, J)
    return h, apply_feedback(J, g), J


def check_rtrl(quick=False, inject=None) -> list:
    """RTRL trace gradients vs. central differences and vs. the unrolled oracle."""
    worst_fd = worst_un = 0.0
    for seed, n, i, T in _instances(quick):
        rng = np.random.default_rng(1000 + seed)
        params = _random_ctrnn(rng, n, i)
        xs = rng.normal(size=(T, i))
        g = rng.normal(size=n)
        _, grads, _ = _rtrl_grads(params, xs, g)
        seen = {k: v + 1e-3 for k, v in grads.items()} if inject == "rtrl_fd" else grads

        def loss(p):
            return g @ oracles.ctrnn_rollout(p["W"], p["tau"], params.dt, xs)

        fd = oracles.fd_jacobian(loss, {"W": params.W.copy(), "tau": params.tau.copy()})
        worst_fd = max(worst_fd, oracles.rel_err(seen["W"], fd["W"]), oracles.rel_err(seen["tau"], fd["tau"]))

        un = oracles.unrolled_grad("ctrnn", {"W": params.W, "tau": params.tau, "dt": params.dt}, xs, g)
        if inject == "rtrl_unrolled":
            grads = {k: v + 1e-3 for k, v in grads.items()}
        worst_un = max(worst_un, oracles.rel_err(grads["W"], un["W"]), oracles.rel_err(grads["tau"], un["tau"]))
    count = len(_instances(quick))
    return [
        CheckResult("rtrl_fd", worst_fd <= 1e-4, worst_fd, 1e-4, f"({count} instances)"),
        CheckResult("rtrl_unrolled", worst_un <= 1e-6, worst_un, 1e-6, f"({count} instances)"),
    ]


def check_diag_rtrl(quick=False, inject=None) -> list:
    """LRU diagonal-RTRL gradients for ``lam`` and ``B_in`` vs. both oracles."""
    worst_fd = worst_un = 0.0
    grid = _instances(quick)
    for seed, n, i, T in grid:
        rng = np.random.default_rng(2000 + seed)
        params = init_lru(rng, i, n)
        xs = rng.normal(size=(T, i))
        # real loss L = Re(c^H h_T); its gradient in the dRe + 1j dIm convention is c
        c = rng.normal(size=n) + 1j * rng.normal(size=n)
        h = np.zeros(n, dtype=complex)
        J = zero_trace(params, "diag_rtrl")
        for x in xs:
            h, J = lru_rtrl_step(params, h, x, J)
        grads = apply_feedback(J, c)
        seen = {k: v + 1e-3 for k, v in grads.items()} if inject == "diag_rtrl_fd" else grads

        def loss(p):
            hT = oracles.lru_closed_form(p["lam"], p["B_in"], xs)
            return float(np.real(np.vdot(c, hT)))

        fd = oracles.fd_jacobian(loss, {"lam": params.lam.copy(), "B_in": params.B_in.copy()})
        for k in ("lam", "B_in"):
            d_re, d_im = fd[k]
            worst_fd = max(worst_fd, oracles.rel_err(seen[k], d_re + 1j * d_im))
        un = oracles.unrolled_grad("lru", {"lam": params.lam, "B_in": params.B_in}, xs, c)
        if inject == "diag_rtrl_unrolled":
            grads = {k: v + 1e-3 for k, v in grads.items()}
        for k in ("lam", "B_in"):
            worst_un = max(worst_un, oracles.rel_err(grads[k], un[k]))
    return [
        CheckResult("diag_rtrl_fd", worst_fd <= 1e-5, worst_fd, 1e-5, f"({len(grid)} instances)"),
        CheckResult("diag_rtrl_unrolled", worst_un <= 1e-5, worst_un, 1e-5, f"({len(grid)} instances)"),
    ]


def check_rflo_structure(quick=False, inject=None, steps=50) -> list:
    """RFLO vs. RTRL with the recurrent block zeroed; tau trace vs. scalar recursion."""
    rng = np.random.default_rng(3)
    n, i = (3, 2) if quick else (5, 3)
    params = _random_ctrnn(rng, n, i)
    params.W[:, i:i + n] = 0.0
    xs = rng.normal(size=(steps, i))
    h_a = np.zeros(n)
    h_b = np.zeros(n)
    Ja = zero_trace(params, "rflo")
    Jb = zero_trace(params, "rtrl")
    worst_w = 0.0
    idx = np.arange(n)
    for x in xs:
        h_a, Ja = rflo_step(params, h_a, x, Ja)
        h_b, Jb = rtrl_step(params, h_b, x, Jb)
        diag = Jb.W[idx, idx, :]
        off = Jb.W.copy()
        off[idx, idx, :] = 0.0
        got = Ja.W + (1e-3 if inject == "rflo_structure" else 0.0)
        worst_w = max(worst_w, float(np.max(np.abs(got - diag))), float(np.max(np.abs(off))))

    rng = np.random.default_rng(4)
    params = _random_ctrnn(rng, n, i)
    xs = rng.normal(size=(steps, i))
    h = np.zeros(n)
    J = zero_trace(params, "rflo")
    ref = oracles.rflo_tau_trace_loops(params.W, params.tau, xs)
    worst_tau = 0.0
    for x, expected in zip(xs, ref):
        h, J = rflo_step(params, h, x, J)
        got = J.tau + (1e-3 if inject == "rflo_tau" else 0.0)
        worst_tau = max(worst_tau, float(np.max(np.abs(got - expected))))
    return [
        CheckResult("rflo_structure", worst_w <= 1e-12, worst_w, 1e-12, f"({steps} steps)"),
        CheckResult("rflo_tau", worst_tau <= 1e-12, worst_tau, 1e-12, f"({steps} steps)"),
    ]


def check_cross_oracle(quick=False, inject=None) -> list:
    """The two oracles agree with each other (sanity of the references)."""
    worst = 0.0
    for seed, n, i, T in _instances(True)[:4 if quick else 8]:
        rng = np.random.default_rng(5000 + seed)
        params = _random_ctrnn(rng, n, i)
        xs = rng.normal(size=(T, i))
        g = rng.normal(size=n)
        un = oracles.unrolled_grad("ctrnn", {"W": params.W, "tau": params.tau}, xs, g)
        if inject == "cross_oracle":
            un = {k: v + 1e-3 for k, v in un.items()}
        fd = oracles.fd_jacobian(lambda p: g @ oracles.ctrnn_rollout(p["W"], p["tau"], 1.0, xs),
                                 {"W": params.W.copy(), "tau": params.tau.copy()})
        worst = max(worst, oracles.rel_err(un["W"], fd["W"]), oracles.rel_err(un["tau"], fd["tau"]))
    return [CheckResult("cross_oracle", worst <= 1e-5, worst, 1e-5)]


def check_adam(quick=False, inject=None) -> list:
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(25)]
    opt = Adam()
    x = x0.copy()
    for g in grads:
        x = opt.step("p", x, g, 1e-2)
    ref = oracles.adam_reference(x0, grads, 1e-2)
    if inject == "adam":
        x = x + 1e-3
    err = float(np.max(np.abs(x - ref)))
    return [CheckResult("adam", err <= 1e-12, err, 1e-12)]


def slip_ring_mrp(n=5, slip=0.1, seed=0):
    """Ring MRP: advance with probability ``1 - slip``, else stay; rewards ``U(0, 1)``."""
    P = np.zeros((n, n))
    for s in range(n):
        P[s, (s + 1) % n] += 1.0 - slip
        P[s, s] += slip
    r = np.random.default_rng(seed).uniform(0.0, 1.0, size=n)
    return P, r


def td_lambda_critic(P, r, gamma, lam, alpha, steps, seed=0, tail=0.5):
    """Linear TD(lambda) critic on one-hot features with plain SGD.

    Returns ``(last_iterate, tail_average)`` where the tail average is the
    mean of the weights over the final ``tail`` fraction of the run.
    """
    rng = np.random.default_rng(seed)
    n = len(r)
    cdf = np.cumsum(P, axis=1)
    eye = np.eye(n)
    theta = np.zeros(n)
    traces = EligibilityTraces(np.zeros((1, n)), np.zeros(n), {})
    zero_actor = np.zeros((1, n))
    s = 0
    start = int(steps * (1.0 - tail))
    acc = np.zeros(n)
    for t in range(steps):
        s_next = min(int(np.searchsorted(cdf[s], rng.random(), side="right")), n - 1)
        traces = accumulate_traces(traces, eye[s], zero_actor, None, 0.0, 0.0, gamma, 0.0, lam, 0.0,
                                   contract=lambda J, g: {})
        delta = td_error(r[s], gamma, value_forward(theta, eye[s]), value_forward(theta, eye[s_next]), False)
        theta = theta + alpha * delta * traces.e_C
        if t >= start:
            acc += theta
        s = s_next
    return theta, acc / max(steps - start, 1)


def check_td_convergence(quick=False, inject=None) -> list:
    P, r = slip_ring_mrp()
    gamma = 0.9
    v = oracles.mrp_value_solver(P, r, gamma)
    steps = 40_000 if quick else 200_000
    out = []
    for lam in (0.0, 0.9):
        last, avg = td_lambda_critic(P, r, gamma, lam, 1e-2, steps, seed=int(lam * 10))
        if inject == "td_convergence":
            avg = avg + 0.1
        err = float(np.max(np.abs(avg - v)))
        err_last = float(np.max(np.abs(last - v)))
        tol = 5e-2 if quick else 1e-2
        out.append(CheckResult(f"td_convergence_lambda{lam:g}", err <= tol, err, tol,
                               f"(tail-averaged; last iterate {err_last:.3e}; {steps} steps)"))
    return out


CHECKS = {
    "rtrl": check_rtrl,
    "diag_rtrl": check_diag_rtrl,
    "rflo": check_rflo_structure,
    "cross_oracle": check_cross_oracle,
    "adam": check_adam,
    "td": check_td_convergence,
}


def run_checks(quick=False, inject=None, only=None) -> list:
    results = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        results.extend(fn(quick=quick, inject=inject))
    return results


def injectable_names() -> list:
    return ["rtrl_fd", "rtrl_unrolled", "diag_rtrl_fd", "diag_rtrl_unrolled", "rflo_structure",
            "rflo_tau", "cross_oracle", "adam", "td_convergence"]

