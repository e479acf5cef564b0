"""Bandit agents trained by plain batch gradient descent.

Every agent reduces its loss gradient to an upstream vector dL/dZ over the
network outputs and pulls it back through the network with one
vector-Jacobian product. The per-kind upstream vectors are:

    pg   -r * [1(a=k) - pi(k|s)]_k
    ql   2 (z_a(s) - r) e_a
    dqn  2 (z_a(s) - r) e_a
    a2c  [-adv * [1(a=k) - pi(k|s)]_k,  -(r - v(s))]
    ppo  [-adv * rho * [1(a=k) - pi(k|s)]_k * 1(|1 - rho| < clip),  -(r - v(s))]

with rho = pi(a|s) / pi_snapshot(a|s) and adv held fixed while differentiating.
For a2c/ppo the last network output is the value head v(s).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .numerics import (
    InvalidInputError,
    MlpSpec,
    NetworkParams,
    backward,
    forward,
    init_params,
    softmax,
    trace,
)

KINDS = ("pg", "ql", "a2c", "dqn", "ppo")
POLICY_KINDS = ("pg", "a2c", "ppo")
Q_KINDS = ("ql", "dqn")
VALUE_HEAD_KINDS = ("a2c", "ppo")


class Interaction(NamedTuple):
    s: np.ndarray
    a: int
    r: float


@dataclass(frozen=True)
class AgentConfig:
    kind: str
    net: MlpSpec
    lr: float
    batch_size: int = 32
    name: str | None = None
    init: str = "uniform"
    ppo_clip: float = 0.2
    ppo_epochs: int = 10
    normalize_advantage: bool = False
    dqn_epsilon_start: float = 1.0
    dqn_epsilon_end: float = 0.05
    dqn_exploration_fraction: float = 0.1
    dqn_buffer_capacity: int = 50_000
    ql_epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"agent kind must be one of {KINDS}, got {self.kind!r}")
        if not self.lr > 0:
            raise InvalidInputError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not 0 < self.ppo_clip < 1:
            raise InvalidInputError("ppo_clip must lie in (0, 1)")
        if self.ppo_epochs < 1:
            raise InvalidInputError("ppo_epochs must be >= 1")
        if self.dqn_buffer_capacity < 1:
            raise InvalidInputError("dqn_buffer_capacity must be >= 1")
        for eps in (self.dqn_epsilon_start, self.dqn_epsilon_end,
                    self.dqn_exploration_fraction, self.ql_epsilon):
            if not 0 <= eps <= 1:
                raise InvalidInputError("epsilon values must lie in [0, 1]")
        if self.kind in VALUE_HEAD_KINDS and self.net.output_dim < 2:
            raise InvalidInputError(f"{self.kind} needs K policy outputs plus a value output")

    @property
    def n_actions(self) -> int:
        return self.net.output_dim - (1 if self.kind in VALUE_HEAD_KINDS else 0)

    @property
    def label(self) -> str:
        return self.name or self.kind


def make_config(kind: str, state_dim: int, n_actions: int, hidden=(), lr=1e-3,
                activation: str | None = None, bias: bool | None = None, **kw) -> AgentConfig:
    """AgentConfig with the output width and activation filled in for ``kind``."""
    if activation is None:
        activation = "relu" if kind in Q_KINDS else "tanh"
    out = n_actions + (1 if kind in VALUE_HEAD_KINDS else 0)
    net = MlpSpec(state_dim, tuple(hidden), out, activation, bias)
    return AgentConfig(kind=kind, net=net, lr=lr, **kw)


def as_arrays(batch):
    """(X, A, R) arrays from a sequence of Interactions or an (X, A, R) triple."""
    if isinstance(batch, tuple) and len(batch) == 3 and not isinstance(batch, Interaction):
        X, A, R = batch
    else:
        if len(batch) == 0:
            raise InvalidInputError("batch must be nonempty")
        X = np.stack([np.asarray(i.s, dtype=np.float64) for i in batch])
        A = np.array([i.a for i in batch])
        R = np.array([i.r for i in batch], dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A = np.asarray(A, dtype=np.int64).reshape(-1)
    R = np.asarray(R, dtype=np.float64).reshape(-1)
    if not len(X) == len(A) == len(R) or len(A) == 0:
        raise InvalidInputError("batch arrays must be nonempty and equally long")
    return X, A, R


def upstream_grad(kind, Z, A, R, adv=None, pi_old=None, clip=0.2) -> np.ndarray:
    """dL/dZ for every row; the heart of each agent's update rule.

    ``adv`` is the frozen advantage (a2c/ppo) and ``pi_old`` the snapshot
    probability of the taken action (ppo).
    """
    Z = np.atleast_2d(Z)
    n = len(A)
    rows = np.arange(n)
    dZ = np.zeros_like(Z)
    if kind in Q_KINDS:
        dZ[rows, A] = 2.0 * (Z[rows, A] - R)
        return dZ
    K = Z.shape[1] - (1 if kind in VALUE_HEAD_KINDS else 0)
    pi = softmax(Z[:, :K])
    coef = -pi
    coef[rows, A] += 1.0
    if kind == "pg":
        dZ[:, :K] = -R[:, None] * coef
        return dZ
    v = Z[:, K]
    if adv is None:
        adv = R - v
    if kind == "a2c":
        weight = adv
    else:
        ratio = pi[rows, A] / pi_old
        weight = np.where(np.abs(1.0 - ratio) < clip, adv * ratio, 0.0)
    dZ[:, :K] = -weight[:, None] * coef
    dZ[:, K] = -(R - v)
    return dZ


class Agent:
    """Mutable training state around one network.

    ``rng`` is the action-sampling stream; it also drives exploration
    coin flips, argmax tie-breaks and replay sampling.
    """

    def __init__(self, config: AgentConfig, init_rng=None, rng=None,
                 total_interactions: int | None = None, params: NetworkParams | None = None):
        self.config = config
        self.kind = config.kind
        if params is None:
            if init_rng is None:
                raise InvalidInputError("need init_rng or params")
            params = init_params(config.net, init_rng, config.init)
        if params.spec != config.net:
            raise InvalidInputError("params were built for a different network spec")
        self.params = params
        self.snapshot: NetworkParams | None = None
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.total_interactions = total_interactions
        self.steps = 0
        self.updates = 0
        self.pending: list[Interaction] = []
        self.buffer: deque | None = (
            deque(maxlen=config.dqn_buffer_capacity) if self.kind == "dqn" else None
        )

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    def copy(self) -> "Agent":
        other = Agent.__new__(Agent)
        other.__dict__.update(self.__dict__)
        other.pending = list(self.pending)
        if self.buffer is not None:
            other.buffer = deque(self.buffer, maxlen=self.buffer.maxlen)
        other.rng = np.random.default_rng()
        other.rng.bit_generator.state = self.rng.bit_generator.state
        return other

    # -- policy ------------------------------------------------------------

    def outputs(self, X, params: NetworkParams | None = None) -> np.ndarray:
        return forward(params or self.params, X)

    @property
    def epsilon(self) -> float:
        c = self.config
        if self.kind == "ql":
            return c.ql_epsilon
        if self.kind != "dqn":
            return 0.0
        if not self.total_interactions:
            return c.dqn_epsilon_end
        horizon = c.dqn_exploration_fraction * self.total_interactions
        if horizon <= 0:
            return c.dqn_epsilon_end
        frac = min(self.steps / horizon, 1.0)
        return c.dqn_epsilon_start + frac * (c.dqn_epsilon_end - c.dqn_epsilon_start)

    def policy_probs(self, X) -> np.ndarray:
        """The action distribution the agent samples from, one row per state."""
        Z = np.atleast_2d(self.outputs(X))
        K = self.n_actions
        if self.kind in POLICY_KINDS:
            return softmax(Z[:, :K])
        is_max = Z == Z.max(axis=1, keepdims=True)
        greedy = is_max / is_max.sum(axis=1, keepdims=True)
        eps = self.epsilon
        return (1.0 - eps) * greedy + eps / K

    def act(self, s, rng=None) -> int:
        rng = rng if rng is not None else self.rng
        z = self.outputs(s)
        K = self.n_actions
        if self.kind in POLICY_KINDS:
            pi = softmax(z[:K])
            a = int(np.searchsorted(np.cumsum(pi), rng.random() * pi.sum(), side="right"))
            return min(a, K - 1)
        if rng.random() < self.epsilon:
            return int(rng.integers(K))
        best = np.flatnonzero(z == z.max())
        return int(best[0] if len(best) == 1 else rng.choice(best))

    # -- gradients -----------------------------------------------------------

    def batch_grad(self, X, A, R, adv=None, pi_old=None, params=None) -> np.ndarray:
        """Sum over the batch of per-interaction loss gradients (an M-vector)."""
        params = params or self.params
        if A.size and (A.min() < 0 or A.max() >= self.n_actions):
            raise InvalidInputError(f"action outside 0..{self.n_actions - 1}")
        cached = trace(params, X)
        Z = cached[1][-1]
        if self.kind == "ppo" and pi_old is None:
            if self.snapshot is None:
                raise InvalidInputError("ppo gradient needs a policy snapshot")
            Zs = np.atleast_2d(forward(self.snapshot, X))
            pi_old = softmax(Zs[:, :self.n_actions])[np.arange(len(A)), A]
        dZ = upstream_grad(self.kind, Z, A, R, adv, pi_old, self.config.ppo_clip)
        return backward(params, X, dZ, cached)

    def loss_grad(self, s, a, r, adv=None) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)[None, :]
        A = np.array([a])
        R = np.array([r], dtype=np.float64)
        adv_arr = None if adv is None else np.array([adv], dtype=np.float64)
        return self.batch_grad(s, A, R, adv_arr)

    # -- training ------------------------------------------------------------

    def _descend(self, X, A, R, **kw):
        g = self.batch_grad(X, A, R, **kw)
        with np.errstate(over="ignore", invalid="ignore"):
            theta = self.params.theta - (self.config.lr / len(A)) * g
        # NetworkParams rejects non-finite theta; the runner turns that into an abort
        self.params = self.params.with_theta(theta)
        self.updates += 1

    def train_step(self, batch) -> "Agent":
        """One update on ``batch``; PPO runs its epoch loop, DQN replays."""
        X, A, R = as_arrays(batch)
        if self.kind == "dqn":
            for row in zip(X, A, R):
                self.buffer.append(Interaction(*row))
            idx = self.rng.integers(0, len(self.buffer), size=len(A))
            X, A, R = as_arrays([self.buffer[i] for i in idx])
            self._descend(X, A, R)
        elif self.kind == "ppo":
            self.snapshot = self.params
            Zs = np.atleast_2d(forward(self.snapshot, X))
            K = self.n_actions
            pi_old = softmax(Zs[:, :K])[np.arange(len(A)), A]
            adv = R - Zs[:, K]
            if self.config.normalize_advantage and len(adv) > 1:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            for _ in range(self.config.ppo_epochs):
                self._descend(X, A, R, adv=adv, pi_old=pi_old)
        else:
            self._descend(X, A, R)
        return self

    def gradient_step(self, batch, lr: float | None = None) -> "Agent":
        """Exactly one descent step on ``batch`` with the current snapshot.

        Used by the theory checks; PPO's advantage comes from the snapshot
        (taken from the current parameters if none is set).
        """
        X, A, R = as_arrays(batch)
        if lr == 0:
            return self
        if lr is not None:
            self.config = replace(self.config, lr=lr)
        kw = {}
        if self.kind == "ppo":
            if self.snapshot is None:
                self.snapshot = self.params
            Zs = np.atleast_2d(forward(self.snapshot, X))
            K = self.n_actions
            kw = {"adv": R - Zs[:, K],
                  "pi_old": softmax(Zs[:, :K])[np.arange(len(A)), A]}
        self._descend(X, A, R, **kw)
        return self

    def observe(self, s, a, r) -> bool:
        """Record one interaction; trains when a full batch is pending."""
        self.steps += 1
        self.pending.append(Interaction(np.asarray(s, dtype=np.float64), int(a), float(r)))
        if len(self.pending) >= self.config.batch_size:
            batch, self.pending = self.pending, []
            self.train_step(batch)
            return True
        return False


# -- per-interaction loss gradients ------------------------------------------


def _single(agent: Agent, kind: str, s, a, r, adv=None):
    if agent.kind != kind:
        raise InvalidInputError(f"agent is {agent.kind}, not {kind}")
    return agent.loss_grad(s, a, r, adv)


def pg_loss_grad(agent, s, a, r):
    return _single(agent, "pg", s, a, r)


def ql_loss_grad(agent, s, a, r):
    return _single(agent, "ql", s, a, r)


def dqn_loss_grad(agent, s, a, r):
    return _single(agent, "dqn", s, a, r)


def a2c_loss_grad(agent, s, a, r, adv=None):
    return _single(agent, "a2c", s, a, r, adv)


def ppo_loss_grad(agent, s, a, r, adv=None):
    """PPO gradient at the current parameters against ``agent.snapshot``.

    ``adv`` defaults to r - v(s) under the snapshot.
    """
    if agent.snapshot is None:
        raise InvalidInputError("ppo gradient needs a policy snapshot")
    if adv is None:
        adv = r - float(forward(agent.snapshot, s)[agent.n_actions])
    return _single(agent, "ppo", s, a, r, adv)


def loss_value(agent: Agent, s, a, r, theta=None, adv=None, pi_old=None) -> float:
    """Scalar loss whose gradient each agent follows, with the advantage and
    snapshot probability held at the values given (or computed at ``agent``'s
    current parameters / snapshot)."""
    params = agent.params if theta is None else agent.params.with_theta(theta)
    z = forward(params, s)
    kind = agent.kind
    if kind in Q_KINDS:
        return float((z[a] - r) ** 2)
    K = agent.n_actions
    logp = z[a] - z[:K].max() - np.log(np.exp(z[:K] - z[:K].max()).sum())
    if kind == "pg":
        return float(-r * logp)
    v = z[K]
    if adv is None:
        ref = agent.snapshot if kind == "ppo" else agent.params
        adv = r - float(forward(ref, s)[K])
    if kind == "a2c":
        return float(-adv * logp + 0.5 * (r - v) ** 2)
    if pi_old is None:
        pi_old = softmax(forward(agent.snapshot, s)[:K])[a]
    ratio = np.exp(logp) / pi_old
    eps = agent.config.ppo_clip
    return float(-adv * np.clip(ratio, 1 - eps, 1 + eps) + 0.5 * (r - v) ** 2)
