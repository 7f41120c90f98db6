import numpy as np
import pytest

from amclab import data, models


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mlp_spec(n_in=6, hidden=5, n_out=3, activation="tanh"):
    return models.ArchitectureSpec(
        input_shape=(1, 1, n_in),
        num_classes=n_out,
        layers=(
            {"kind": "flatten"},
            {"kind": "dense", "units": hidden, "activation": activation},
            {"kind": "dense", "units": n_out, "activation": "linear"},
        ),
    )


def linear_spec(n_in=4, n_out=3):
    return models.ArchitectureSpec(
        input_shape=(1, 1, n_in),
        num_classes=n_out,
        layers=(
            {"kind": "flatten"},
            {"kind": "dense", "units": n_out, "activation": "linear"},
        ),
    )


def logistic_2class(w):
    """2-class linear model whose CE on label 1 is the logistic loss of w.x."""
    w = np.asarray(w, dtype=float)
    spec = linear_spec(n_in=len(w), n_out=2)
    m = models.build(spec, seed=0)
    wm = np.zeros((len(w), 2))
    wm[:, 1] = w
    m.params["layer1_w"] = wm
    m.params["layer1_b"] = np.zeros(2)
    return m


@pytest.fixture
def tiny_conv_model():
    spec = models.target_spec((1, 8, 8), 3)
    return models.build(spec, seed=7)


@pytest.fixture
def trained_synth():
    """A small trained model plus its data splits; session-cached."""
    return _trained_synth_cached()


_CACHE = {}


def _trained_synth_cached():
    if "trained" not in _CACHE:
        train = data.synth_generate(4, 320, 16, seed=11)
        train.provenance = "train"
        reserve = data.synth_generate(4, 64, 16, seed=22)
        reserve.provenance = "attack_reserve"
        m = models.build(models.target_spec((1, 16, 16), 4), seed=33)
        m = models.train_plain(
            m, train, models.TrainConfig(epochs=10, learning_rate=0.1,
                                         batch_size=32, seed=44)
        )
        _CACHE["trained"] = (m, train, reserve)
    model, train, reserve = _CACHE["trained"]
    return models.clone(model), train, reserve
