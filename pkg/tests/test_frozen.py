"""Pipeline outputs frozen from a reviewed run; any drift needs an explanation."""

import json
from pathlib import Path

import numpy as np
import pytest

from freeze import compute

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen.json").read_text())


@pytest.fixture(scope="module")
def current():
    return compute()


@pytest.mark.parametrize("key", ["features_per_image", "class_counts", "n_filtered", "first_points",
                                 "seg_class_counts"])
def test_exact_values(current, key):
    assert current[key] == FROZEN[key]


@pytest.mark.parametrize("key", ["first_descriptors", "variability", "nn_error_seed24"])
def test_float_values(current, key):
    np.testing.assert_allclose(current[key], FROZEN[key], rtol=1e-9, atol=1e-12)
