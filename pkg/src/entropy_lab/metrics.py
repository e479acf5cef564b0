"""Evaluation-set metrics: value, two entropies and action histograms.

A *policy* here is anything callable on an (n, d) state matrix that returns
the (n, K) matrix of action probabilities; ``Agent.policy_probs`` is one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsRecord:
    step: int
    value: float
    entropy_state: float
    entropy_marginal: float
    histogram: np.ndarray
    value_mode: str = "exact"
    actions: np.ndarray | None = field(default=None, repr=False)

    def sorted_histogram(self) -> np.ndarray:
        return np.sort(self.histogram)[::-1]


def _probs(policy, states) -> np.ndarray:
    probs = policy(states) if callable(policy) else policy
    return np.atleast_2d(np.asarray(probs, dtype=np.float64))


def shannon_entropy(p, axis=-1) -> np.ndarray:
    """Natural-log entropy with 0 log 0 taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -(p * logs).sum(axis=axis)


def sample_actions(probs, rng) -> np.ndarray:
    """One action per row by inverse-CDF sampling.

    All uniforms are drawn up front, so row i always consumes uniform i
    regardless of how rows are later split across workers.
    """
    probs = np.atleast_2d(probs)
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    a = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


def policy_value(policy, env, eval_set, rng=None, actions=None) -> tuple[float, str]:
    """Expected reward over the eval set and the mode used to get it.

    Exact expectation ("exact") when the environment can enumerate its
    rewards, otherwise the mean of rewards for sampled actions ("sampled").
    """
    if len(eval_set) == 0:
        raise ValueError("eval set is empty")
    probs = _probs(policy, eval_set.states)
    table = env.expected_rewards(eval_set.states, eval_set.aux)
    if table is not None:
        return float(np.mean((probs * table).sum(axis=1))), "exact"
    if actions is None:
        actions = sample_actions(probs, rng)
    r = env.rewards(eval_set.states, eval_set.aux, actions, rng)
    return float(np.mean(r)), "sampled"


def policy_entropy_state(policy, eval_set) -> float:
    states = getattr(eval_set, "states", eval_set)
    return float(np.mean(shannon_entropy(_probs(policy, states))))


def action_histogram(policy, eval_set, rng, sorted: bool = False, n_actions=None,
                     actions=None) -> np.ndarray:
    states = getattr(eval_set, "states", eval_set)
    if actions is None:
        probs = _probs(policy, states)
        n_actions = probs.shape[1]
        actions = sample_actions(probs, rng)
    counts = np.bincount(actions, minlength=n_actions)
    return np.sort(counts)[::-1] if sorted else counts


def histogram_entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    return 0.0 if total == 0 else float(shannon_entropy(counts / total))


def policy_entropy_marginal(policy, eval_set, rng) -> float:
    return histogram_entropy(action_histogram(policy, eval_set, rng))


def evaluate(policy, env, eval_set, rng, step: int = 0) -> MetricsRecord:
    """All checkpoint metrics from one consistent set of sampled actions.

    The same sampled actions feed the histogram, the marginal entropy and,
    in sampled mode, the value estimate; reward noise comes from a child
    stream so it never shifts the action draws.
    """
    probs = _probs(policy, eval_set.states)
    action_rng, reward_rng = rng.spawn(2)
    actions = sample_actions(probs, action_rng)
    counts = np.bincount(actions, minlength=probs.shape[1])
    value, mode = policy_value(probs, env, eval_set, reward_rng, actions=actions)
    return MetricsRecord(
        step=int(step),
        value=value,
        entropy_state=float(np.mean(shannon_entropy(probs))),
        entropy_marginal=histogram_entropy(counts),
        histogram=counts,
        value_mode=mode,
        actions=actions,
    )
