"""Small synthetic training problems shared by unit and acceptance tests."""

import numpy as np

from salientseg.classify import one_hot_targets


def xor_fixture(n, rng):
    """Two informative coordinates (XOR of their signs) inside 36-d noise; classes 1 and 2."""
    s = rng.integers(0, 2, (n, 2))
    x = rng.normal(0, 0.05, (n, 36))
    x[:, :2] = np.where(s, 0.5, -0.5) + rng.normal(0, 0.05, (n, 2))
    return x, one_hot_targets(1 + (s[:, 0] ^ s[:, 1]))


def linear_fixture(rng):
    x = rng.normal(size=(9, 36))
    lab = np.repeat([1, 2, 3], 3)
    x[:, 0] += 3 * (lab == 1)
    x[:, 1] += 3 * (lab == 2)
    return x, one_hot_targets(lab)
