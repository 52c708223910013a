import numpy as np
import pytest

from pushdp.models import (
    Dataset,
    Model,
    Task,
    dataset_from_csv,
    dataset_to_csv,
    evaluate,
    full_objective,
    per_sample_gradient,
    per_sample_loss,
    predictions,
    synth_dataset,
)


def reference_gd(model, dataset, steps=3000, lr=0.2):
    """Independent full-batch descent used as the trainability oracle."""
    params = np.zeros(model.dim)
    for _ in range(steps):
        _, grad = full_objective(model, dataset, params)
        params -= lr * grad
    return params


def test_synth_dataset_shapes_and_balance():
    data = synth_dataset(3, n=6, J=40, d_in=5, classes=2)
    assert data.features.shape == (6, 40, 5)
    assert data.labels.shape == (6, 40)
    counts = np.bincount(data.labels.reshape(-1), minlength=2)
    assert counts[0] == counts[1] == 120


def test_synth_dataset_deterministic_in_seed():
    a = synth_dataset(11, 4, 30, d_in=6)
    b = synth_dataset(11, 4, 30, d_in=6)
    c = synth_dataset(12, 4, 30, d_in=6)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features, c.features)


def test_synth_dataset_means_shared_across_seeds():
    # the class structure is fixed; only the sampling varies with the seed
    a = synth_dataset(1, 2, 2000, d_in=4, classes=2)
    b = synth_dataset(2, 2, 2000, d_in=4, classes=2)
    for data in (a, b):
        X, y = data.flat()
        gap = X[y == 0].mean(axis=0) - X[y == 1].mean(axis=0)
        # orthogonal means of norm 3 sit 3 * sqrt(2) apart
        assert np.linalg.norm(gap) == pytest.approx(3.0 * np.sqrt(2), rel=0.1)
    mean_a = a.flat()[0][a.flat()[1] == 0].mean(axis=0)
    mean_b = b.flat()[0][b.flat()[1] == 0].mean(axis=0)
    assert np.linalg.norm(mean_a - mean_b) < 0.5


def test_logistic_is_trainable_noise_free():
    # enough overlap that the optimum is finite and descent converges fast
    data = synth_dataset(5, n=4, J=250, d_in=8, separation=2.5)
    model = Model(kind="logistic", d_in=8)
    params = reference_gd(model, data, steps=6000, lr=0.4)
    _, grad = full_objective(model, data, params)
    assert np.linalg.norm(grad) <= 1e-4
    X, y = data.flat()
    assert np.mean(predictions(model, params, X) == y) >= 0.9


def test_logistic_gradient_at_zero_params():
    # sigmoid(0) = 0.5, so the gradient at (x, y=1) is (-0.5 x, -0.5)
    model = Model(kind="logistic", d_in=4)
    x = np.array([1.0, -2.0, 0.5, 3.0])
    g = per_sample_gradient(model, np.zeros(5), x, 1)
    assert g[:4] == pytest.approx(-0.5 * x, abs=1e-15)
    assert g[4] == pytest.approx(-0.5, abs=1e-15)
    g0 = per_sample_gradient(model, np.zeros(5), x, 0)
    assert g0[:4] == pytest.approx(0.5 * x, abs=1e-15)


def test_mlp_output_bias_gradient_at_zero_params():
    # zero hidden weights give uniform softmax: grad_b2 = 1/c - onehot(y)
    model = Model(kind="mlp", d_in=3, classes=4, hidden=5)
    g = per_sample_gradient(model, np.zeros(model.dim), np.array([1.0, 2.0, 3.0]), 2)
    _, _, _, gb2 = model.unflatten(g)
    expected = np.full(4, 0.25)
    expected[2] -= 1.0
    assert gb2 == pytest.approx(expected, abs=1e-15)


def _fd_gradient(model, params, x, y, step=1e-6):
    fd = np.empty_like(params)
    for i in range(len(params)):
        up, down = params.copy(), params.copy()
        up[i] += step
        down[i] -= step
        fd[i] = (per_sample_loss(model, up, x, y) - per_sample_loss(model, down, x, y)) / (
            2 * step
        )
    return fd


@pytest.mark.parametrize(
    "model",
    [
        Model(kind="logistic", d_in=6),
        Model(kind="mlp", d_in=4, classes=3, hidden=3),
    ],
    ids=["logistic", "mlp"],
)
def test_per_sample_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(7)
    for _ in range(20):
        params = rng.standard_normal(model.dim)
        x = rng.standard_normal(model.d_in)
        y = int(rng.integers(model.classes))
        exact = per_sample_gradient(model, params, x, y)
        fd = _fd_gradient(model, params, x, y)
        assert np.linalg.norm(fd - exact) <= 1e-5 * max(np.linalg.norm(exact), 1e-8)


def test_full_objective_is_mean_of_per_sample(seed=9):
    data = synth_dataset(seed, n=3, J=20, d_in=5)
    model = Model(kind="logistic", d_in=5)
    rng = np.random.default_rng(0)
    params = rng.standard_normal(model.dim)
    loss, grad = full_objective(model, data, params)
    per_losses, per_grads = [], []
    for node in range(data.n):
        for j in range(data.J):
            x, y = data.features[node, j], int(data.labels[node, j])
            per_losses.append(per_sample_loss(model, params, x, y))
            per_grads.append(per_sample_gradient(model, params, x, y))
    assert loss == pytest.approx(np.mean(per_losses), abs=1e-12)
    assert grad == pytest.approx(np.mean(per_grads, axis=0), abs=1e-12)


def test_full_objective_invariant_under_node_permutation():
    data = synth_dataset(3, n=4, J=10, d_in=5)
    perm = np.array([2, 0, 3, 1])
    shuffled = Dataset(
        features=data.features[perm], labels=data.labels[perm],
        classes=data.classes, seed=data.seed,
    )
    model = Model(kind="logistic", d_in=5)
    params = np.random.default_rng(1).standard_normal(model.dim)
    loss_a, grad_a = full_objective(model, data, params)
    loss_b, grad_b = full_objective(model, shuffled, params)
    assert loss_a == pytest.approx(loss_b, rel=1e-14)
    assert grad_a == pytest.approx(grad_b, rel=1e-12)


def test_unflatten_views_round_trip():
    model = Model(kind="mlp", d_in=4, classes=3, hidden=5)
    rng = np.random.default_rng(1)
    params = rng.standard_normal(model.dim)
    W1, b1, W2, b2 = model.unflatten(params)
    rebuilt = np.concatenate([W1.ravel(), b1, W2.ravel(), b2])
    assert np.array_equal(rebuilt, params)
    # views write through to the flat vector
    W1[0, 0] = 42.0
    assert params[0] == 42.0


def test_model_dim():
    assert Model(kind="logistic", d_in=10).dim == 11
    assert Model(kind="mlp", d_in=4, classes=3, hidden=5).dim == 4 * 5 + 5 + 3 * 5 + 3


def test_model_validation():
    with pytest.raises(ValueError):
        Model(kind="logistic", d_in=4, classes=3)
    with pytest.raises(ValueError):
        Model(kind="mlp", d_in=4, classes=3, hidden=0)
    with pytest.raises(ValueError):
        Model(kind="forest", d_in=4)


def test_task_checks_dimensions():
    data = synth_dataset(0, 2, 10, d_in=5)
    with pytest.raises(ValueError):
        Task(model=Model(kind="logistic", d_in=4), dataset=data)


def test_evaluate_reports_loss_grad_accuracy():
    data = synth_dataset(2, 3, 50, d_in=6)
    model = Model(kind="logistic", d_in=6)
    loss, grad, acc = evaluate(model, data, np.zeros(model.dim))
    ref_loss, ref_grad = full_objective(model, data, np.zeros(model.dim))
    assert loss == ref_loss
    assert np.array_equal(grad, ref_grad)
    assert 0.0 <= acc <= 1.0


def test_mlp_trains_past_chance():
    data = synth_dataset(4, n=2, J=150, d_in=5, classes=3)
    model = Model(kind="mlp", d_in=5, classes=3, hidden=8)
    rng = np.random.default_rng(3)
    params = 0.1 * rng.standard_normal(model.dim)
    for _ in range(1500):
        _, grad = full_objective(model, data, params)
        params -= 0.3 * grad
    X, y = data.flat()
    assert np.mean(predictions(model, params, X) == y) >= 0.9


def test_dataset_csv_round_trip(tmp_path):
    data = synth_dataset(6, n=3, J=7, d_in=4)
    path = tmp_path / "data.csv"
    dataset_to_csv(data, path)
    back = dataset_from_csv(path)
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.labels, data.labels)
    assert back.seed == data.seed and back.classes == data.classes
