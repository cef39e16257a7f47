import numpy as np
import pytest

from condgrad.domains import SoftminLMO
from condgrad.errors import FormatError, InvalidArgumentError
from condgrad.fw import Constant, Default, Learned, run_fw, step_size
from condgrad.l2lc import (
    LstmController, MetaDivergenceError, QPTask, ScheduleController, TaskFamily, learned_direction_step,
    learned_gamma_step, load_controller, lstm_step, meta_train, qp_tasks, run_learned_direction,
    run_learned_gamma, save_controller, svm_circles_tasks, unroll_loss_and_grad,
)
from condgrad.svm import fw_svm_step, simplex_qp_problem

from oracles import central_diff, frozen_unroll_loss, lstm_reference, random_psd, rel_err


def _zero_controller(variant="gamma"):
    c = LstmController.init(variant, 0)
    return LstmController(variant, {k: np.zeros_like(v) for k, v in c.params.items()}, meta=c.meta)


def test_init_shapes_and_ranges():
    c = LstmController.init("gamma", 3)
    assert c.hidden == 20 and c.layers == 2
    assert c.params["l0.Wx_i"].shape == (1, 20)
    assert c.params["l1.Wx_i"].shape == (20, 20)
    assert c.params["l1.Wh_o"].shape == (20, 20)
    assert c.params["out.w"].shape == (20,)
    for name, value in c.params.items():
        if name.startswith("l") and ".b_" in name:
            assert np.all(value == (1.0 if name.endswith("_f") else 0.0))
        elif name != "out.b":
            assert np.abs(value).max() <= 0.1
    with pytest.raises(InvalidArgumentError):
        LstmController.init("momentum")


def test_zero_parameters_zero_state():
    c = _zero_controller()
    out, state = lstm_step(c, np.array([[0.7]]), c.initial_state(1))
    assert out[0] == 0.0
    for h, cell in state:
        assert np.all(h == 0.0) and np.all(cell == 0.0)


def test_saturated_forget_gate_preserves_cell():
    c = _zero_controller()
    for layer in range(2):
        c.params[f"l{layer}.b_f"][:] = 1e3
    rng = np.random.default_rng(0)
    state = [(np.zeros((1, 20)), rng.standard_normal((1, 20))) for _ in range(2)]
    _, new = lstm_step(c, np.zeros((1, 1)), state)
    for (_, before), (_, after) in zip(state, new):
        np.testing.assert_array_equal(after, before)


def test_lstm_step_matches_reference():
    rng = np.random.default_rng(1)
    c = LstmController.init("direction", 4)
    x = rng.standard_normal((5, 1))
    state = [(rng.standard_normal((5, 20)), rng.standard_normal((5, 20))) for _ in range(2)]
    out, new = lstm_step(c, x, state)
    ref_out, ref_new = lstm_reference(c.params, x, state, 2)
    np.testing.assert_allclose(out, ref_out, rtol=1e-13, atol=1e-15)
    for (h, cc), (rh, rc) in zip(new, ref_new):
        np.testing.assert_allclose(h, rh, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(cc, rc, rtol=1e-13, atol=1e-15)


def test_lstm_output_gradient_finite_differences():
    from condgrad.l2lc import lstm_forward
    from condgrad.tape import Tape
    rng = np.random.default_rng(2)
    c = LstmController.init("gamma", 5)
    c = LstmController("gamma", {k: v * 5 for k, v in c.params.items()})
    x = rng.standard_normal((3, 1))
    state = [(rng.standard_normal((3, 20)) * 0.5, rng.standard_normal((3, 20)) * 0.5) for _ in range(2)]
    proj = rng.standard_normal(3)
    tape = Tape()
    pv = {k: tape.input(v) for k, v in c.params.items()}
    out, _ = lstm_forward(tape, pv, tape.const(x), [(tape.const(h), tape.const(s)) for h, s in state], 2)
    grads = tape.backward(tape.dot(out, proj))
    for name in ("l0.Wx_c", "l1.Wh_f", "l0.b_i", "l1.b_o", "out.w", "out.b"):
        def f(p, name=name):
            params = dict(c.params)
            params[name] = p
            return float(lstm_reference(params, x, state, 2)[0] @ proj)
        assert rel_err(grads[pv[name]], central_diff(f, c.params[name])) <= 1e-5, name


def test_state_mismatch_rejected():
    c = LstmController.init("gamma", 0)
    with pytest.raises(InvalidArgumentError):
        lstm_step(c, np.zeros((1, 1)), c.initial_state(2))
    with pytest.raises(InvalidArgumentError):
        lstm_step(c, np.zeros((1, 2)), c.initial_state(1))


# reductions

def test_rigged_gamma_controller_reproduces_default_bit_exactly():
    K = random_psd(20, np.random.default_rng(3))
    problem = simplex_qp_problem(K, SoftminLMO(10.0))
    w_ref, ref = run_fw(problem, Default(), 100)
    w_l2l, got = run_learned_gamma(ScheduleController(Default()), problem, 100)
    assert got.objective == ref.objective
    assert got.step_size == ref.step_size
    np.testing.assert_array_equal(w_l2l, w_ref)
    w_sched, via_schedule = run_fw(problem, Learned(ScheduleController(Default())), 100)
    np.testing.assert_array_equal(w_sched, w_ref)


def test_identity_direction_reduces_to_fw_svm_step():
    K = random_psd(12, np.random.default_rng(4))
    problem = simplex_qp_problem(K, SoftminLMO(2.0))
    w, _ = run_learned_direction(ScheduleController(), problem, 50, Default(), 2.0)
    a = np.full(12, 1 / 12)
    for t in range(50):
        a = fw_svm_step(a, K, step_size(Default(), t), 2.0)
    np.testing.assert_array_equal(w, a)


def test_single_steps():
    K = random_psd(6, np.random.default_rng(5))
    problem = simplex_qp_problem(K, SoftminLMO(10.0))
    c = LstmController.init("gamma", 1)
    w1, gamma, state = learned_gamma_step(c, 1.0, c.initial_state(1), problem.x0, problem)
    assert 0.0 < gamma < 1.0
    assert abs(w1.sum() - 1) <= 1e-12
    d = LstmController.init("direction", 1)
    w2, _ = learned_direction_step(d, d.initial_state(6), problem.x0, problem, 0.5, 1.0)
    assert abs(w2.sum() - 1) <= 1e-12


def test_feasibility_under_adversarial_controllers():
    rng = np.random.default_rng(6)
    for trial in range(10):
        K = random_psd(8, rng) * 10 ** rng.uniform(-2, 2)
        for variant in ("gamma", "direction"):
            c = LstmController.init(variant, trial)
            c = LstmController(variant, {k: v * rng.uniform(1, 300) for k, v in c.params.items()}, meta=c.meta)
            problem = simplex_qp_problem(K, SoftminLMO(10.0))
            if variant == "gamma":
                w = problem.x0
                prev, state = 1.0, c.initial_state(1)
                for t in range(60):
                    w, prev, state = learned_gamma_step(c, prev, state, w, problem, t)
                    assert 0.0 <= prev <= 1.0
                    assert abs(w.sum() - 1) <= 1e-9 and w.min() >= -1e-12
            else:
                w = problem.x0
                state = c.initial_state(8)
                for t in range(60):
                    w, state = learned_direction_step(c, state, w, problem, step_size(Constant(0.7), t), 5.0, t)
                    assert abs(w.sum() - 1) <= 1e-9 and w.min() >= -1e-12


# meta-gradient

@pytest.mark.parametrize("variant", ["gamma", "direction"])
def test_meta_gradient_three_step_unroll(variant):
    rng = np.random.default_rng(7)
    K = random_psd(3, rng)
    c = LstmController.init(variant, 8, beta=3.0)
    c = LstmController(variant, {k: v * 4 for k, v in c.params.items()}, meta=c.meta)
    loss, grads, fed = unroll_loss_and_grad(c, QPTask(K), 3)
    gammas = [step_size(c.schedule, t) for t in range(3)] if variant == "direction" else None
    assert loss == pytest.approx(frozen_unroll_loss(c.params, variant, K, fed, 3.0, gammas), rel=1e-12)
    # compare the whole gradient: single blocks can be ~1e-9, below FD roundoff
    names = sorted(c.params)
    ad, fd = [], []
    for name in names:
        def f(p, name=name):
            params = dict(c.params)
            params[name] = p
            return frozen_unroll_loss(params, variant, K, fed, 3.0, gammas)
        ad.append(np.ravel(grads[name]))
        fd.append(np.ravel(central_diff(f, c.params[name])))
    assert rel_err(np.concatenate(ad), np.concatenate(fd)) <= 1e-4


def test_segments_sum_to_full_loss():
    K = random_psd(5, np.random.default_rng(9))
    c = LstmController.init("gamma", 2)
    whole, _, _ = unroll_loss_and_grad(c, QPTask(K), 30, unroll=30)
    split, _, _ = unroll_loss_and_grad(c, QPTask(K), 30, unroll=7)
    assert split == pytest.approx(whole, rel=1e-12)


# meta-training

def test_zero_epochs_returns_initial_controller():
    family = qp_tasks(n=5, n_train=2, n_val=1, n_test=1, seed=0)
    result = meta_train(family, "gamma", T=10, meta_epochs=0, seed=4)
    fresh = LstmController.init("gamma", 4)
    for k in fresh.params:
        np.testing.assert_array_equal(result.controller.params[k], fresh.params[k])
    assert result.train_losses == [] and result.best_epoch == 0


def test_meta_loss_decreases_on_small_qps():
    family = qp_tasks(n=10, n_train=4, n_val=2, n_test=1, seed=1)
    result = meta_train(family, "direction", T=50, meta_epochs=50, patience=50, seed=0)
    assert result.train_losses[-1] <= 0.9 * result.initial_train_loss


def test_meta_loss_csv_rows(tmp_path):
    family = qp_tasks(n=4, n_train=2, n_val=1, n_test=1, seed=2)
    result = meta_train(family, "gamma", T=10, unroll=5, meta_epochs=3, patience=10)
    text = result.to_csv(tmp_path / "m.csv")
    assert text.splitlines()[0] == "epoch,train_loss,val_loss"
    assert len(text.splitlines()) == 1 + len(result.train_losses) == 4


def test_early_stopping_keeps_best_controller():
    family = qp_tasks(n=4, n_train=2, n_val=1, n_test=1, seed=3)
    result = meta_train(family, "gamma", T=10, unroll=5, meta_epochs=30, patience=2, lr=0.05)
    best = min([result.initial_val_loss] + result.val_losses)
    from condgrad.l2lc import mean_loss
    assert mean_loss(result.controller, family.val, 10) == pytest.approx(best, rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    family = TaskFamily([QPTask(np.full((3, 3), 1e308))], [], [])
    with pytest.raises(MetaDivergenceError):
        meta_train(family, "gamma", T=20, meta_epochs=1)


def test_unroll_length_validated():
    family = qp_tasks(n=3, n_train=1, n_val=1, n_test=1)
    with pytest.raises(InvalidArgumentError):
        meta_train(family, "gamma", T=10, unroll=0)


def test_svm_circles_splits_are_disjoint():
    family = svm_circles_tasks(n_total=120, task_size=20, n_train=3, n_val=1, outer_iters=2)
    parts = family.info["splits"]
    rows = [set(map(tuple, p.x)) for p in parts]
    assert not (rows[0] & rows[1]) and not (rows[0] & rows[2]) and not (rows[1] & rows[2])
    assert sum(len(r) for r in rows) == 120
    assert len(family.train) == 3 and len(family.val) == 1 and family.test[0].n == 40


# controller files

def test_controller_round_trip(tmp_path):
    c = LstmController.init("direction", 11, beta=2.5, schedule=Constant(0.05))
    path = tmp_path / "c.cgm"
    save_controller(c, path, {"config_hash": "h"})
    lines = path.read_text().splitlines()
    assert lines[:4] == ["CGM1 lstm", "variant=direction", "hidden=20", "layers=2"]
    back = load_controller(path)
    assert back.variant == "direction" and back.beta == 2.5
    assert back.schedule.c == 0.05
    for k in c.params:
        np.testing.assert_array_equal(back.params[k], c.params[k])


def test_controller_file_errors(tmp_path):
    path = tmp_path / "c.cgm"
    path.write_text("CGM1 svm\n")
    with pytest.raises(FormatError):
        load_controller(path)
    c = LstmController.init("gamma", 0)
    save_controller(c, path)
    text = path.read_text().splitlines()
    text[-1] = text[-1].replace(",", ",x", 1)
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(FormatError, match=f"line {len(text)}"):
        load_controller(path)
