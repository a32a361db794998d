import numpy as np
import pytest

from unbiased_implicit.core import ClickDataset
from unbiased_implicit.propensity import (
    PropensityScores,
    clip,
    estimate_popularity_propensity,
    rare_items,
    relative_popularity,
)


def test_relative_popularity_values():
    theta = relative_popularity([4, 1, 0], eta=0.5)
    np.testing.assert_allclose(theta, [1.0, 0.5, 0.5])


def test_most_popular_item_is_one():
    ds = ClickDataset(3, 3, [0, 1, 2, 0], [0, 0, 0, 1])
    scores = estimate_popularity_propensity(ds)
    assert scores.theta[0] == 1.0
    assert np.all((scores.theta > 0) & (scores.theta <= 1))


def test_scale_invariance():
    a = relative_popularity([5, 2, 1])
    b = relative_popularity([15, 6, 3])
    np.testing.assert_allclose(a, b)


def test_no_clicks():
    with pytest.raises(ValueError):
        estimate_popularity_propensity(ClickDataset(2, 2, [], []))


def test_eta_range():
    with pytest.raises(ValueError):
        relative_popularity([1, 2], eta=0.0)


def test_clip_floor():
    s = clip(PropensityScores([0.01, 0.5, 1.0]), 0.1)
    np.testing.assert_allclose(s.theta, [0.1, 0.5, 1.0])
    assert s.clip == 0.1
    assert clip(s, 0.0) == s
    with pytest.raises(ValueError):
        clip(s, 2.0)


def test_rare_items_bottom_half():
    s = PropensityScores([0.9, 0.1, 0.5, 0.2])
    assert rare_items(s).tolist() == [1, 3]


def test_invalid_scores():
    with pytest.raises(ValueError):
        PropensityScores([0.0, 0.5])
