"""Named, independently seeded random streams.

Each component draws from its own stream so that, for example, changing
how often an agent explores never shifts the states an environment
produces. All streams derive from ``numpy.random.SeedSequence``.
"""

import numpy as np

STREAM_IDS = {
    "env_init": 0,
    "state": 1,
    "reward": 2,
    "agent_init": 3,
    "action": 4,
    "eval": 5,
    "probe": 6,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for stream ``name`` of run ``seed``.

    ``extra`` integers give further sub-streams (e.g. a checkpoint step or
    an agent index) without colliding with any other name.
    """
    key = [int(seed), STREAM_IDS[name], *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


class Streams:
    """Bundle of the named streams for one run."""

    def __init__(self, seed: int, *extra: int):
        self.seed = int(seed)
        self.extra = tuple(int(e) for e in extra)
        self._cache = {}

    def __getattr__(self, name):
        if name not in STREAM_IDS:
            raise AttributeError(name)
        if name not in self._cache:
            self._cache[name] = stream(self.seed, name, *self.extra)
        return self._cache[name]

    def eval_at(self, step: int) -> np.random.Generator:
        """Fresh evaluation stream for a checkpoint; identical on every rerun."""
        return stream(self.seed, "eval", *self.extra, step)
