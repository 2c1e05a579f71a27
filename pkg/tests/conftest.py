import numpy as np
import pytest

from cargosim.learners import RoundWork


class FrozenLearner:
    """Learner stub with zero local steps: the iterate passes through unchanged,
    so rounds exercise pure mixing."""

    def __init__(self, flops: int = 100):
        self.flops = flops

    def epoch(self, node, x, t):
        return np.asarray(x, dtype=float).copy(), 0.0, RoundWork(self.flops, 0, 1)

    def initial_loss(self, node, x):
        return 0.0


@pytest.fixture
def frozen_learner():
    return FrozenLearner()
