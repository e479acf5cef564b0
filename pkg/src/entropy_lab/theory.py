"""Predict network-output changes from closed-form update terms and check
them against what a real gradient step does.

The update terms (``omega_*``) are built from the explicit output Jacobian,
while the agents train through the vector-Jacobian product in
``numerics.backward``. The two routes share only ``forward``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .agents import Agent, VALUE_HEAD_KINDS, as_arrays, make_config
from .numerics import (
    InvalidInputError,
    MlpSpec,
    NetworkParams,
    finite_difference_gradient,
    forward,
    init_params,
    output_jacobian,
    policy_gradient,
    relative_error,
    softmax,
    softmax_coefficients,
)

LEMMA1_TOL = 1e-6
LINEAR_TOL = 1e-10
RATIO_BAND = (3.5, 4.5)


@dataclass
class VerificationReport:
    suite: str
    agent: str
    lr: float
    residual: float
    residual_half: float | None = None
    ratio: float | None = None
    passed: bool = False
    predicted_norm: float = 0.0
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = str(v)
        return d


# -- gradient of a softmax probability --------------------------------------------


def verify_lemma1(params: NetworkParams, s, a, h: float = 1e-5,
                  tol: float = LEMMA1_TOL) -> VerificationReport:
    analytic = policy_gradient(params, s, a)
    numeric = finite_difference_gradient(
        lambda t: softmax(forward(params.with_theta(t), s))[a], params.theta, h
    )
    err = relative_error(analytic, numeric)
    return VerificationReport("lemma1", "softmax", 0.0, err, passed=err <= tol,
                              predicted_norm=float(np.linalg.norm(analytic)))


# -- linear agents -------------------------------------------------------------


def omega_theorem1(kind: str, params: NetworkParams, s, a, r) -> np.ndarray:
    """K x d update matrix of a linear PG or QL agent for one interaction."""
    if not params.spec.is_linear:
        raise InvalidInputError("the linear-agent update needs an unbiased linear network")
    if kind not in ("pg", "ql"):
        raise InvalidInputError(f"linear update defined for pg and ql, not {kind!r}")
    s = np.asarray(s, dtype=np.float64)
    z = forward(params, s)
    if kind == "pg":
        return r * np.outer(softmax_coefficients(softmax(z), a), s)
    out = np.zeros((len(z), len(s)))
    out[a] = 2.0 * (r - z[a]) * s
    return out


def _agent_for(kind, params, lr, batch_size):
    spec = params.spec
    cfg = make_config(kind, spec.input_dim, spec.output_dim, spec.hidden,
                      lr=lr if lr > 0 else 1.0, activation=spec.activation,
                      bias=spec.bias, batch_size=batch_size)
    return Agent(cfg, params=params)


def verify_theorem1(kind, params: NetworkParams, batch, lr: float, probes,
                    omega_sign: float = 1.0) -> VerificationReport:
    X, A, R = as_arrays(batch)
    probes = np.atleast_2d(probes)
    N = len(A)
    W = params.theta.reshape(params.spec.output_dim, params.spec.input_dim)
    omega = sum(omega_theorem1(kind, params, s, a, r) for s, a, r in zip(X, A, R))
    before = probes @ W.T
    predicted = before + omega_sign * (lr / N) * probes @ omega.T
    if lr > 0:
        agent = _agent_for(kind, params, lr, N)
        agent.train_step((X, A, R))
        actual = forward(agent.params, probes)
    else:
        actual = forward(params, probes)
    res = float(np.max(np.abs(actual - predicted)))
    return VerificationReport("thm1", kind, lr, res, passed=res <= LINEAR_TOL,
                              predicted_norm=float(np.max(np.abs(predicted - before))))


# -- general agents --------------------------------------------------------------


def omega_theorem2(kind: str, agent: Agent, s, a, r, adv=None) -> np.ndarray:
    """M-vector update direction for A2C, DQN or PPO (equal to minus the
    loss gradient). For PPO the advantage defaults to r - v(s) under the
    policy snapshot and the ratio compares against that snapshot."""
    if kind not in ("a2c", "dqn", "ppo"):
        raise InvalidInputError(f"general update defined for a2c, dqn, ppo, not {kind!r}")
    if agent.kind != kind:
        raise InvalidInputError(f"agent is {agent.kind}, not {kind}")
    J = output_jacobian(agent.params, s)
    z = forward(agent.params, s)
    if kind == "dqn":
        return 2.0 * (r - z[a]) * J[a]
    K = agent.n_actions
    v = z[K]
    pi = softmax(z[:K])
    policy_dir = softmax_coefficients(pi, a) @ J[:K]
    if kind == "a2c":
        return (r - v) * (J[K] + policy_dir)
    snapshot = agent.snapshot if agent.snapshot is not None else agent.params
    zs = forward(snapshot, s)
    if adv is None:
        adv = r - zs[K]
    ratio = pi[a] / softmax(zs[:K])[a]
    weight = ratio if abs(1.0 - ratio) < agent.config.ppo_clip else 0.0
    return (r - v) * J[K] + adv * weight * policy_dir


def _policy_outputs(agent, X, params=None):
    Z = np.atleast_2d(forward(params or agent.params, X))
    return Z[:, :agent.n_actions]


def _taylor_residual(agent, X, A, R, lr, probes, omega_sign):
    N = len(A)
    omega = sum(omega_theorem2(agent.kind, agent, s, a, r) for s, a, r in zip(X, A, R))
    step = omega_sign * (lr / N) * omega
    K = agent.n_actions
    predicted = np.stack([output_jacobian(agent.params, x)[:K] @ step for x in probes])
    moved = agent.copy().gradient_step((X, A, R), lr)
    actual = _policy_outputs(agent, probes, moved.params) - _policy_outputs(agent, probes)
    return float(np.max(np.abs(actual - predicted))), float(np.max(np.abs(predicted)))


def verify_theorem2(agent: Agent, batch, lr: float, probes,
                    omega_sign: float = 1.0) -> VerificationReport:
    """First-order check of one descent step at ``lr`` and ``lr / 2``.

    Linear networks must match to 1e-10. Otherwise, once the residual is
    below a tenth of the predicted change, halving the step must shrink the
    residual by a factor in [3.5, 4.5].
    """
    X, A, R = as_arrays(batch)
    probes = np.atleast_2d(probes)
    if agent.kind == "ppo" and agent.snapshot is None:
        agent = agent.copy()
        agent.snapshot = agent.params
    res, pred = _taylor_residual(agent, X, A, R, lr, probes, omega_sign)
    res_half, _ = _taylor_residual(agent, X, A, R, lr / 2, probes, omega_sign)
    ratio = res / res_half if res_half > 0 else math.inf if res > 0 else math.nan
    report = VerificationReport("thm2", agent.kind, lr, res, res_half, ratio,
                                predicted_norm=pred)
    if agent.params.spec.is_linear or lr == 0:
        report.passed = res <= LINEAR_TOL and res_half <= LINEAR_TOL
        report.note = "linear" if lr else "zero step"
    elif res <= 1e-12:
        report.passed = True
        report.note = "residual at roundoff level"
    elif res >= 0.1 * pred:
        report.note = "step too large for the first-order regime"
    else:
        report.passed = RATIO_BAND[0] <= ratio <= RATIO_BAND[1]
    return report


# -- randomized suites -------------------------------------------------------------


def random_net(rng, linear=False, max_hidden=8, max_in=6, max_out=6,
               activation="tanh", out_extra=0) -> NetworkParams:
    d = int(rng.integers(2, max_in + 1))
    K = int(rng.integers(2, max_out + 1))
    if linear:
        spec = MlpSpec(d, (), K + out_extra, activation, bias=False)
    else:
        depth = int(rng.integers(1, 3))
        hidden = tuple(int(rng.integers(1, max_hidden + 1)) for _ in range(depth))
        spec = MlpSpec(d, hidden, K + out_extra, activation, bias=True)
    params = init_params(spec, rng)
    # scale up so outputs and policies are far from uniform
    return params.with_theta(params.theta * rng.uniform(1.0, 3.0))


def random_batch(rng, d, K, n):
    X = rng.uniform(0, 1, size=(n, d))
    A = rng.integers(0, K, size=n)
    R = rng.normal(size=n)
    return X, A, R


def lemma1_suite(n_cases=100, seed=0):
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_cases):
        params = random_net(rng, linear=bool(i % 4 == 0), max_out=10)
        s = rng.normal(size=params.spec.input_dim)
        a = int(rng.integers(params.spec.output_dim))
        reports.append(verify_lemma1(params, s, a))
    return reports


def theorem1_suite(n_cases=50, seed=0, batch_size=4, n_probes=20, lr=0.1, omega_sign=1.0):
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_cases):
        for kind in ("pg", "ql"):
            params = random_net(rng, linear=True)
            d, K = params.spec.input_dim, params.spec.output_dim
            batch = random_batch(rng, d, K, batch_size)
            probes = rng.uniform(0, 1, size=(n_probes, d))
            reports.append(verify_theorem1(kind, params, batch, lr, probes, omega_sign))
    return reports


def random_theorem2_agent(rng, kind, linear=False):
    extra = 1 if kind in VALUE_HEAD_KINDS else 0
    params = random_net(rng, linear=linear, out_extra=extra)
    spec = params.spec
    cfg = make_config(kind, spec.input_dim, spec.output_dim - extra, spec.hidden,
                      lr=1e-3, activation="tanh", bias=spec.bias, batch_size=4)
    agent = Agent(cfg, params=params)
    if kind == "ppo":
        # half the cases compare against a perturbed snapshot so the clip
        # band is exercised on both sides
        noise = rng.normal(scale=0.3 * rng.integers(0, 2), size=spec.n_params)
        agent.snapshot = params.with_theta(params.theta + noise)
    return agent


def theorem2_suite(n_cases=50, seed=0, lr=1e-3, batch_size=4, n_probes=20,
                   linear=False, kinds=("a2c", "dqn", "ppo"), omega_sign=1.0):
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_cases):
        for kind in kinds:
            agent = random_theorem2_agent(rng, kind, linear)
            K = agent.n_actions
            d = agent.params.spec.input_dim
            batch = random_batch(rng, d, K, batch_size)
            probes = rng.uniform(0, 1, size=(n_probes, d))
            reports.append(verify_theorem2(agent, batch, lr, probes, omega_sign))
    return reports
