import numpy as np
import pytest

from condgrad.datasets import Circles, generate
from condgrad.domains import SimplexLMO
from condgrad.errors import FormatError, InvalidArgumentError
from condgrad.fw import Constant, Default, run_fw
from condgrad.svm import (
    FeatureNet, LabeledDataset, Linear, Rbf, SvmModel, build_kernel, deep_svm_predict, deep_svm_train,
    dual_gradient, dual_objective, fw_svm_step, hinge_loss_and_grad, load_model, parse_kernel, save_model,
    simplex_qp_problem, svm_predict, svm_train,
)

from oracles import central_diff, jacobi_eigh, naive_quadratic, pgd_simplex_qp, random_psd, rel_err


def test_labels_validated():
    with pytest.raises(InvalidArgumentError):
        LabeledDataset(np.zeros((2, 1)), [1, 0])
    with pytest.raises(InvalidArgumentError):
        LabeledDataset(np.zeros((2, 1)), [1])


def test_linear_kernel_hand_expansion():
    data = LabeledDataset(np.array([[1.0, 0.0], [1.0, 0.0]]), [1, -1])
    np.testing.assert_array_equal(build_kernel(data, Linear(), np.inf), [[1, -1], [-1, 1]])


def test_rbf_diagonal():
    rng = np.random.default_rng(0)
    data = LabeledDataset(rng.standard_normal((7, 3)), rng.choice([-1, 1], 7))
    np.testing.assert_allclose(np.diag(build_kernel(data, Rbf(0.7), 4.0)), 1.25)


def test_rbf_matches_definition():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 2))
    k = Rbf(0.5)(x, x)
    for i in range(5):
        for j in range(5):
            assert k[i, j] == pytest.approx(np.exp(-np.sum((x[i] - x[j]) ** 2) / 0.5), rel=1e-12)


def test_kernel_psd_by_jacobi():
    rng = np.random.default_rng(2)
    for kernel in (Linear(), Rbf(0.5)):
        data = LabeledDataset(rng.standard_normal((10, 3)), rng.choice([-1, 1], 10))
        K = build_kernel(data, kernel, 1.0)
        np.testing.assert_array_equal(K, K.T)
        assert jacobi_eigh(K)[0][0] >= -1e-9


def test_kernel_needs_two_samples_and_positive_c():
    one = LabeledDataset(np.zeros((1, 2)), [1])
    with pytest.raises(InvalidArgumentError):
        build_kernel(one, Linear())
    two = LabeledDataset(np.zeros((2, 2)), [1, -1])
    with pytest.raises(InvalidArgumentError):
        build_kernel(two, Linear(), 0.0)


def test_parse_kernel():
    assert parse_kernel("linear") == Linear()
    assert parse_kernel("rbf:0.25") == Rbf(0.25)
    with pytest.raises(InvalidArgumentError):
        parse_kernel("poly")
    with pytest.raises(InvalidArgumentError):
        Rbf(0.0)


def test_dual_objective_examples():
    K = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert dual_objective(np.array([1.0, 0.0]), K) == 0.5
    assert dual_objective(np.array([0.5, 0.5]), K) == 0.0
    with pytest.raises(InvalidArgumentError):
        dual_objective(np.ones(3) / 3, K)


def test_dual_objective_matches_double_loop():
    rng = np.random.default_rng(3)
    K = random_psd(9, rng)
    a = rng.dirichlet(np.ones(9))
    assert dual_objective(a, K) == pytest.approx(naive_quadratic(a, K), rel=1e-12)
    np.testing.assert_allclose(dual_gradient(a, K), central_diff(lambda z: naive_quadratic(z, K), a), rtol=1e-7)


def test_fw_svm_step_edges():
    rng = np.random.default_rng(4)
    K = random_psd(5, rng)
    a = rng.dirichlet(np.ones(5))
    np.testing.assert_array_equal(fw_svm_step(a, K, 0.0, 2.0), a)
    from condgrad.linalg import softmin
    np.testing.assert_allclose(fw_svm_step(a, K, 1.0, 2.0), softmin(K @ a, 2.0))


def test_softmin_steps_approach_exact_run():
    for seed in range(5):
        K = random_psd(20, np.random.default_rng(seed))
        a = np.full(20, 1 / 20)
        for t in range(500):
            a = fw_svm_step(a, K, 2.0 / (t + 2.0), 1e4)
        exact, _ = run_fw(simplex_qp_problem(K, SimplexLMO()), Default(), 500)
        assert abs(dual_objective(a, K) - dual_objective(exact, K)) <= 1e-3


def test_two_point_svm():
    data = LabeledDataset(np.array([[1.0, 1.0], [-1.0, -1.0]]), [1, -1])
    model, trace = svm_train(data, Linear(), C=1.0, beta=1.0, T=500)
    np.testing.assert_allclose(model.alpha, [0.5, 0.5], atol=1e-12)
    assert svm_predict(model, [2.0, 2.0])[0] == 1
    # symmetric n=2 model: the boundary is the perpendicular bisector x1 + x2 = 0
    for p in ([0.3, -0.1], [-0.5, 0.2], [3.0, -2.9]):
        label, score = svm_predict(model, p)
        assert np.sign(score) == np.sign(p[0] + p[1])


def test_sign_zero_is_positive():
    data = LabeledDataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), [1, -1])
    model, _ = svm_train(data, Linear(), T=10)
    assert svm_predict(model, [0.0, 5.0]) == (1, 0.0)


def test_score_is_linear_in_alpha():
    rng = np.random.default_rng(5)
    data = LabeledDataset(rng.standard_normal((6, 2)), rng.choice([-1, 1], 6))
    a1, a2 = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    m = lambda a: SvmModel(a, data.x, data.y, Rbf(), 1.0, 1.0)
    q = rng.standard_normal((4, 2))
    blend = m(0.3 * a1 + 0.7 * a2).decision_function(q)
    np.testing.assert_allclose(blend, 0.3 * m(a1).decision_function(q) + 0.7 * m(a2).decision_function(q))


def test_positive_training_point_far_from_negatives():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]])
    data = LabeledDataset(x, [-1, -1, 1])
    model, _ = svm_train(data, Rbf(0.5), T=100)
    assert svm_predict(model, [5.0, 5.0])[0] == 1


def test_prediction_dimension_mismatch():
    data = LabeledDataset(np.eye(2), [1, -1])
    model, _ = svm_train(data, Linear(), T=5)
    with pytest.raises(InvalidArgumentError):
        model.predict(np.ones((1, 3)))


def test_circles_rbf_accuracy():
    data = generate(Circles(200, noise=0.1, seed=7))
    model, trace = svm_train(data, Rbf(0.5), C=1.0, beta=1.0, schedule=Constant(0.01), T=500)
    assert model.accuracy(data) >= 0.95
    assert len(trace) == 500


def test_circles_threshold_reachable_by_oracle():
    # the accuracy the FW run is held to is what the exact optimum gives
    data = generate(Circles(200, noise=0.1, seed=7))
    K = build_kernel(data, Rbf(0.5), 1.0)
    alpha, _ = pgd_simplex_qp(K, iters=20000)
    assert SvmModel(alpha, data.x, data.y, Rbf(0.5), 1.0, 1.0).accuracy(data) >= 0.95


def test_linear_kernel_cannot_separate_circles():
    data = generate(Circles(200, noise=0.1, seed=7))
    model, _ = svm_train(data, Linear(), T=500)
    assert model.accuracy(data) < 0.8


def test_svm_iterates_on_simplex():
    data = generate(Circles(60, seed=1))
    K = build_kernel(data, Rbf(0.5), 1.0)
    a = np.full(60, 1 / 60)
    for t in range(300):
        a = fw_svm_step(a, K, 0.01, 1.0)
        assert abs(a.sum() - 1) <= 1e-9 and a.min() >= -1e-12


def test_model_file_round_trip(tmp_path):
    data = generate(Circles(30, seed=2))
    model, _ = svm_train(data, Rbf(0.4), C=2.0, beta=3.0, T=20)
    model.meta["config_hash"] = "abc"
    path = tmp_path / "m.cgm"
    save_model(model, path)
    assert path.read_text().startswith("CGM1 svm\n")
    back = load_model(path)
    np.testing.assert_array_equal(back.alpha, model.alpha)
    np.testing.assert_array_equal(back.x, model.x)
    assert back.kernel == Rbf(0.4) and back.C == 2.0 and back.beta == 3.0
    assert back.meta["config_hash"] == "abc"


def test_model_file_errors(tmp_path):
    path = tmp_path / "m.cgm"
    path.write_text("CGM1 softmax\n")
    with pytest.raises(FormatError):
        load_model(path)
    path.write_text("CGM1 svm\nkernel=linear\nbeta=1\nC=1\nn=1\nalpha,label,feature_0\n0.5,1,x\n")
    with pytest.raises(FormatError, match="line 7"):
        load_model(path)


# deep SVM

def test_deep_zero_outer_iterations_reduces_to_svm_train():
    data = generate(Circles(80, seed=3))
    net = FeatureNet.init((2, 4, 2), 5)
    res = deep_svm_train(data, net=net, outer_iters=0, inner_iters=200, schedule=Constant(0.01))
    feats = LabeledDataset(net.features(data.x), data.y)
    model, trace = svm_train(feats, Linear(), 1.0, 1.0, Constant(0.01), 200)
    np.testing.assert_array_equal(res.model.alpha, model.alpha)
    assert res.trace.objective == trace.objective


def test_deep_svm_circles_accuracy():
    data = generate(Circles(200, noise=0.1, seed=7))
    res = deep_svm_train(data, outer_iters=20, seed=0)
    labels, _ = deep_svm_predict(res.net, res.model, data.x)
    assert np.mean(labels == data.y) >= 0.95


def test_hinge_gradient_finite_differences():
    data = generate(Circles(12, seed=4))
    net = FeatureNet.init((2, 4, 2), 1)
    alpha = np.random.default_rng(0).dirichlet(np.ones(12))
    _, grads = hinge_loss_and_grad(net, data.x, data.y, alpha)
    for name, value in net.params.items():
        def f(p, name=name):
            trial = net.copy()
            trial.params[name] = p
            return hinge_loss_and_grad(trial, data.x, data.y, alpha)[0]
        assert rel_err(grads[name], central_diff(f, value)) <= 1e-5
