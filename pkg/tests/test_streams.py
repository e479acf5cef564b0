import numpy as np
import pytest

from entropy_lab.streams import Streams, stream


class TestStreams:
    def test_reproducible(self):
        np.testing.assert_array_equal(stream(3, "state").random(5), stream(3, "state").random(5))

    def test_names_independent(self):
        assert stream(3, "state").random() != stream(3, "reward").random()

    def test_seeds_independent(self):
        assert stream(3, "state").random() != stream(4, "state").random()

    def test_extra_key(self):
        assert stream(3, "eval", 0).random() != stream(3, "eval", 1).random()

    def test_bundle_caches(self):
        s = Streams(1, 2)
        assert s.action is s.action
        np.testing.assert_array_equal(Streams(1, 2).action.random(3), stream(1, "action", 2).random(3))

    def test_eval_at_fresh(self):
        s = Streams(0)
        assert s.eval_at(100).random() == s.eval_at(100).random()

    def test_unknown_name(self):
        with pytest.raises(AttributeError):
            Streams(0).nonsense
