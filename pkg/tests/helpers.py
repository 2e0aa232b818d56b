import numpy as np

from easvo import so3
from easvo.dataset_io import EventStream


def random_rotation(rng):
    return so3.exp(rng.normal(size=3) * rng.uniform(0, 1.5))


def make_stream(rng, n, width=16, height=12, t0=0.0):
    t = np.sort(rng.uniform(t0, t0 + 1.0, n))
    return EventStream(t, rng.integers(0, width, n), rng.integers(0, height, n), rng.integers(0, 2, n), width, height)
