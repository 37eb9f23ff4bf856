""" Shared fixtures for the evdeblur test suite. """
import numpy as np
import pytest
from scipy import ndimage

from evdeblur.events import EventStream
from evdeblur.motion import FlowField


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: end-to-end solver runs (tens of seconds)')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ten_events():
    """ 10 events at t = 0..9 on a 4x2 sensor, alternating polarity. """
    t = np.arange(10)
    return EventStream(t, t % 4, t % 2, np.where(t % 2, -1, 1), width=4, height=2, t_start=0, t_end=9)


def random_stream(rng, n, width=8, height=6, t_max=1000):
    t = np.sort(rng.integers(0, t_max, size=n))
    return EventStream(t, rng.integers(0, width, size=n), rng.integers(0, height, size=n),
                       rng.choice([-1, 1], size=n), width, height, t_start=0, t_end=t_max)


def random_flow(rng, shape, scale=1.5):
    return FlowField(rng.uniform(-scale, scale, size=shape), rng.uniform(-scale, scale, size=shape))


def smooth_texture(rng, shape, sigma=3.0, amplitude=1.0):
    """ Gaussian-smoothed noise rescaled to [0, amplitude]. """
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode='wrap')
    return amplitude * (noise - noise.min()) / (noise.max() - noise.min())
