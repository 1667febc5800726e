"""Tests for the attacks module in the robust_fl package."""

import numpy as np
import pytest

from src.robust_fl import attacks
from src.robust_fl.data import Dataset


@pytest.fixture
def digits():
    labels = np.arange(10)
    return Dataset(np.arange(20, dtype=float).reshape(10, 2), labels, 10)


def test_attack_spec_defaults_per_kind():
    assert attacks.AttackSpec("large_outlier").sigma == 10.0
    assert attacks.AttackSpec("noise_injection").sigma == 1.0
    assert attacks.AttackSpec().kind == "none"


def test_attack_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        attacks.AttackSpec("sign_flip")
    with pytest.raises(ValueError):
        attacks.AttackSpec("noise_injection", sigma=-1.0)
    with pytest.raises(ValueError):
        attacks.AttackSpec("label_flipping")
    with pytest.raises(ValueError):
        attacks.AttackSpec("label_flipping", label_map={0: 1, 2: 1})


def test_attack_spec_from_dict_preset():
    spec = attacks.AttackSpec.from_dict({"kind": "label_flipping", "label_map": "mnist"})
    assert spec.label_map == attacks.MNIST_FLIP_MAP
    assert spec.to_dict()["label_map"]["0"] == 9
    with pytest.raises(ValueError):
        attacks.AttackSpec.from_dict({"kind": "label_flipping", "label_map": "cifar"})


def test_forge_outlier_zero_sigma_is_constant():
    spec = attacks.AttackSpec("large_outlier", sigma=0.0, mu=3.0)
    update = attacks.forge_outlier_update(50, spec, np.random.default_rng(0))
    assert np.all(update == 3.0)


def test_forge_outlier_moments():
    spec = attacks.AttackSpec("large_outlier", sigma=10.0, mu=0.0)
    update = attacks.forge_outlier_update(10_000, spec, np.random.default_rng(11))
    assert update.shape == (10_000,)
    assert abs(update.mean()) < 0.3
    assert 9.5 < update.std() < 10.5


def test_forge_outlier_is_deterministic_per_seed():
    spec = attacks.AttackSpec("large_outlier")
    first = attacks.forge_outlier_update(100, spec, np.random.default_rng(5))
    second = attacks.forge_outlier_update(100, spec, np.random.default_rng(5))
    assert np.array_equal(first, second)


def test_forge_outlier_needs_matching_kind():
    with pytest.raises(ValueError):
        attacks.forge_outlier_update(3, attacks.AttackSpec("noise_injection"), np.random.default_rng(0))


def test_inject_noise_zero_sigma_returns_update():
    spec = attacks.AttackSpec("noise_injection", sigma=0.0)
    update = np.linspace(-1.0, 1.0, 7)
    assert np.array_equal(attacks.inject_noise(update, spec, np.random.default_rng(0)), update)


def test_inject_noise_is_centered():
    spec = attacks.AttackSpec("noise_injection", sigma=1.0)
    update = np.full(10_000, 2.5)
    noisy = attacks.inject_noise(update, spec, np.random.default_rng(3))
    assert abs((noisy - update).mean()) < 0.03
    assert noisy.shape == update.shape


def test_flip_labels_mnist_map(digits):
    flipped = attacks.flip_labels(digits.subset([0, 4, 7]), attacks.MNIST_FLIP_MAP)
    assert flipped.labels.tolist() == [9, 5, 7]


def test_flip_labels_binary_is_involution():
    data = Dataset(np.zeros((3, 1)), [0, 1, 1], 2)
    once = attacks.flip_labels(data, attacks.BINARY_FLIP_MAP)
    assert once.labels.tolist() == [1, 0, 0]
    twice = attacks.flip_labels(once, attacks.BINARY_FLIP_MAP)
    assert twice.labels.tolist() == [0, 1, 1]


def test_flip_labels_mnist_twice_equals_once(digits):
    once = attacks.flip_labels(digits, attacks.MNIST_FLIP_MAP)
    twice = attacks.flip_labels(once, attacks.MNIST_FLIP_MAP)
    assert once.labels.tolist() == [9, 8, 7, 6, 5, 5, 6, 7, 8, 9]
    assert np.array_equal(twice.labels, once.labels)


def test_flip_labels_keeps_features_and_original(digits):
    flipped = attacks.flip_labels(digits, attacks.MNIST_FLIP_MAP)
    assert np.array_equal(flipped.features, digits.features)
    assert digits.labels.tolist() == list(range(10))
    assert attacks.flip_labels(digits, {}) is digits


def test_flip_labels_rejects_labels_outside_alphabet():
    data = Dataset(np.zeros((2, 1)), [0, 1], 2)
    with pytest.raises(ValueError):
        attacks.flip_labels(data, attacks.MNIST_FLIP_MAP)
