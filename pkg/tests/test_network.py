import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmpcouple.errors import ConfigError, DomainError
from dmpcouple.network import (
    SIZES,
    CouplingModel,
    TrainConfig,
    fit_network,
    flat_dims,
    forward,
    glorot_init,
    jacobian,
    n_params,
    nmse,
    output_range,
    pack,
    predict_normalized,
    train_normalized,
    unpack,
)


def _model(theta, lo=-1.0, hi=1.0):
    return CouplingModel(theta, np.zeros(17), np.ones(17), np.full(3, lo), np.full(3, hi))


def _teacher_data(seed, n=400):
    rng = np.random.default_rng(seed)
    teacher = glorot_init(rng) * 2.0
    X = rng.normal(size=(n, 17))
    return X, predict_normalized(teacher, X)


def test_architecture_size():
    assert SIZES == (17, 20, 10, 3)
    assert n_params() == 17 * 20 + 20 + 20 * 10 + 10 + 10 * 3 + 3 == 603
    theta = np.arange(603.0)
    np.testing.assert_array_equal(pack(unpack(theta)), theta)
    assert [W.shape for W, _ in unpack(theta)] == [(20, 17), (10, 20), (3, 10)]


def test_zero_network_outputs_midpoint():
    out = forward(_model(np.zeros(603)), np.random.default_rng(0).normal(size=17))
    np.testing.assert_array_equal(out, 0.0)


def test_single_unit_network_matches_scalar_sigmoid():
    layers = [(np.zeros((20, 17)), np.zeros(20)), (np.zeros((10, 20)), np.zeros(10)),
              (np.zeros((3, 10)), np.zeros(3))]
    w = np.linspace(-0.5, 0.5, 17)
    layers[0][0][0] = w
    layers[1][0][0, 0] = 1.0
    layers[2][0][0, 0] = 1.0
    m = _model(pack(layers), lo=0.0, hi=1.0)
    for x in np.random.default_rng(1).normal(size=(20, 17)):
        expect = 1.0 / (1.0 + math.exp(-max(float(w @ x), 0.0)))
        assert forward(m, x)[0] == pytest.approx(expect, abs=1e-12)


def test_forward_rejects_bad_input():
    m = _model(np.zeros(603))
    with pytest.raises(DomainError):
        forward(m, np.zeros(16))
    with pytest.raises(DomainError):
        forward(m, np.full(17, np.inf))


def test_model_validation():
    with pytest.raises(DomainError):
        CouplingModel(np.zeros(602), np.zeros(17), np.ones(17), -np.ones(3), np.ones(3))
    with pytest.raises(DomainError):
        CouplingModel(np.zeros(603), np.zeros(17), np.ones(17), np.ones(3), np.ones(3))


@given(st.integers(0, 2**32 - 1), st.floats(1.0, 1e4))
@settings(max_examples=30)
def test_outputs_bounded_for_extreme_inputs(seed, scale):
    rng = np.random.default_rng(seed)
    m = CouplingModel(glorot_init(rng) * 10, rng.normal(size=17), rng.uniform(0.1, 2, 17),
                      np.array([-5.0, 0.0, 1.0]), np.array([5.0, 0.1, 1.5]))
    out = forward(m, rng.normal(size=(500, 17)) * scale)
    assert np.all(out > m.out_lo) and np.all(out < m.out_hi)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(7)
    theta = glorot_init(rng)
    Z = rng.normal(size=(8, 17))
    _, J = jacobian(theta, Z)
    h = 1e-6
    worst = 0.0
    for j in rng.choice(603, 80, replace=False):
        e = np.zeros(603)
        e[j] = h
        fd = (predict_normalized(theta + e, Z) - predict_normalized(theta - e, Z)) / (2 * h)
        err = np.abs(fd - J[:, :, j]).max() / max(np.abs(J[:, :, j]).max(), 1e-6)
        worst = max(worst, err)
    assert worst < 1e-4


def test_output_range_maps_extremes_to_margins():
    Y = np.array([[0.0, -2.0, 5.0], [1.0, 2.0, 5.0]])
    lo, hi = output_range(Y)
    np.testing.assert_allclose((Y.min(0)[:2] - lo[:2]) / (hi - lo)[:2], 0.1)
    np.testing.assert_allclose((Y.max(0)[:2] - lo[:2]) / (hi - lo)[:2], 0.9)
    assert lo[2] < 5.0 < hi[2]


def test_residue_dimension_is_flat_and_not_stretched():
    rng = np.random.default_rng(1)
    Y = np.column_stack([rng.normal(scale=1e-9, size=50), rng.normal(scale=30.0, size=50),
                         rng.normal(scale=10.0, size=50)])
    np.testing.assert_array_equal(flat_dims(Y), [True, False, False])
    lo, hi = output_range(Y)
    # the residue spans a sliver of the output range instead of [0.1, 0.9]
    assert hi[0] - lo[0] == pytest.approx(hi[1] - lo[1])
    assert np.ptp(Y[:, 0]) < 1e-6 * (hi[0] - lo[0])
    with pytest.warns(UserWarning):
        per, _ = nmse(Y + rng.normal(size=Y.shape) * 1e-3, Y)
    assert math.isnan(per[0]) and per[1] < 1e-6


# -- nmse ------------------------------------------------------------------------

def test_nmse_examples():
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(200000, 3)) * [1.0, 3.0, 0.1]
    assert nmse(Y, Y)[1] == 0.0
    per, mean = nmse(np.broadcast_to(Y.mean(0), Y.shape), Y)
    np.testing.assert_allclose(per, 1.0, rtol=1e-12)
    noisy = Y + rng.normal(size=Y.shape) * 0.5 * Y.std(0)
    assert nmse(noisy, Y)[1] == pytest.approx(0.25, abs=0.005)


def test_nmse_flags_constant_dimension():
    Y = np.column_stack([np.arange(10.0), np.full(10, 2.0), np.arange(10.0) ** 2])
    with pytest.warns(UserWarning, match="zero-variance"):
        per, mean = nmse(Y + 1, Y)
    assert math.isnan(per[1])
    assert mean == pytest.approx(np.nanmean(per))
    with pytest.raises(DomainError):
        nmse(np.zeros((3, 2)), np.zeros((3, 3)))


# -- training ----------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lam_down=2.0)
    with pytest.raises(ConfigError):
        TrainConfig(max_iters=0)


def _sparse_teacher(rng, h1=10, h2=5):
    """A network using only part of each hidden layer, so the student has spare units."""
    (W1, b1), (W2, b2), (W3, b3) = unpack(glorot_init(rng).copy())
    W1[h1:] = 0.0
    W2[:, h1:] = 0.0
    W2[h2:] = 0.0
    W3[:, h2:] = 0.0
    return pack([(W1, b1), (W2, b2), (W3, b3)])


@pytest.mark.parametrize("seed", [0, 3])
def test_teacher_student_reaches_low_nmse(seed):
    rng = np.random.default_rng(seed)
    teacher = _sparse_teacher(rng)
    Z = rng.normal(size=(1000, 17))
    Yn = predict_normalized(teacher, Z)
    theta, *_ = train_normalized(Z, Yn, 1.0 / Yn.var(axis=0),
                                 TrainConfig(max_iters=300, restarts=3, goal=1e-8, seed=seed))
    assert nmse(predict_normalized(theta, Z), Yn)[1] < 1e-3
    Zt = rng.normal(size=(1000, 17))
    assert nmse(predict_normalized(theta, Zt), predict_normalized(teacher, Zt))[1] < 1e-2


def test_restarts_never_worsen_the_fit():
    X, Y = _teacher_data(5, n=300)
    one = fit_network(X, Y, TrainConfig(max_iters=30, seed=4))
    three = fit_network(X, Y, TrainConfig(max_iters=30, seed=4, restarts=3))
    assert three.train_meta["loss_history"][-1] <= one.train_meta["loss_history"][-1]


def test_linear_targets_fit():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(400, 17))
    A = rng.normal(size=(3, 17))
    Y = X @ A.T
    m = fit_network(X, Y, TrainConfig(max_iters=200, seed=0))
    assert nmse(forward(m, X), Y)[1] < 1e-2


def test_huge_damping_still_decreases_loss():
    X, Y = _teacher_data(3, n=200)
    m = fit_network(X, Y, TrainConfig(max_iters=1, lam_init=1e12, lam_max=1e14, seed=0))
    h = m.train_meta["loss_history"]
    assert len(h) == 2 and h[1] < h[0]


def test_accepted_losses_non_increasing_and_deterministic(trained):
    model, ds = trained
    h = np.array(model.train_meta["loss_history"])
    assert np.all(np.diff(h) <= 0)
    again = fit_network(ds.X[ds.train], ds.Ct[ds.train], TrainConfig(max_iters=40, seed=3))
    assert again.theta.tobytes() == model.theta.tobytes()


def test_trained_model_generalizes_on_held_out_rows(trained):
    model, ds = trained
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, test_err = nmse(forward(model, ds.X[ds.test]), ds.Ct[ds.test])
    assert test_err < 0.1


def test_bad_training_data_rejected():
    with pytest.raises(DomainError):
        fit_network(np.zeros((10, 16)), np.zeros((10, 3)))
    X = np.zeros((10, 17))
    X[0, 0] = np.nan
    with pytest.raises(DomainError):
        fit_network(X, np.zeros((10, 3)))


def test_few_rows_logs_warning(caplog):
    X, Y = _teacher_data(4, n=50)
    with caplog.at_level("WARNING"):
        fit_network(X, Y, TrainConfig(max_iters=2))
    assert "training rows" in caplog.text
