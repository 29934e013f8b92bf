import numpy as np
import pytest

import cnfgrad.tensor as T
from cnfgrad import tasks as TK
from cnfgrad.nn import (
    Mlp,
    Optimizer,
    TrainConfig,
    TrainingDiverged,
    format_metrics,
    load_checkpoint,
    predict_with_inference_trick,
    run_training,
    save_checkpoint,
    train_epoch,
)
from cnfgrad.tensor import ShapeError, Tensor


class TestMlp:
    def test_zero_weight_softmax_is_uniform(self):
        net = Mlp((4, 3), head="softmax", seed=0)
        net.weights[0].data[...] = 0.0
        out, raw = net.forward(Tensor(np.ones((5, 4))))
        np.testing.assert_allclose(out.data, 1 / 3)
        assert raw.data.tolist() == np.zeros((5, 3)).tolist()

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        net = Mlp((6, 8, 4), seed=1)
        out, _ = net.forward(Tensor(rng.normal(size=(7, 6))))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)

    def test_sigmoid_head_in_open_interval(self):
        rng = np.random.default_rng(0)
        net = Mlp((6, 8, 4), head="sigmoid", seed=1)
        out, _ = net.forward(Tensor(rng.normal(size=(7, 6))))
        assert np.all((out.data > 0.0) & (out.data < 1.0))

    def test_input_width_checked(self):
        net = Mlp((4, 3), seed=0)
        with pytest.raises(ShapeError, match="width 4"):
            net.forward(Tensor(np.ones((2, 5))))

    def test_cross_entropy_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        net = Mlp((5, 6, 4), seed=2)
        batch = rng.normal(size=(3, 5))
        target = np.zeros((3, 4))
        target[np.arange(3), rng.integers(0, 4, 3)] = 1.0

        out, _ = net.forward(Tensor(batch))
        T.backward(T.cross_entropy(out, target))
        analytic = [p.grad.copy() for p in net.params()]

        h = 1e-5
        for p, got in zip(net.params(), analytic):
            flat = p.data.reshape(-1)
            for i in range(0, flat.size, max(1, flat.size // 5)):
                orig = flat[i]
                flat[i] = orig + h
                up = float(T.cross_entropy(net.forward(Tensor(batch))[0], target).data)
                flat[i] = orig - h
                down = float(T.cross_entropy(net.forward(Tensor(batch))[0], target).data)
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                rel = abs(got.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                assert rel <= 1e-5


class TestOptimizer:
    def test_sgd_zero_gradient_is_identity(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = Optimizer([p], kind="sgd", lr=0.5)
        before = p.data.copy()
        opt.step()
        assert np.array_equal(p.data, before)

    def test_adam_bias_correction_first_step(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([1.0, -2.0])
        opt = Optimizer([p], kind="adam", lr=0.1)
        opt.step()
        # first Adam step has magnitude lr regardless of gradient scale
        np.testing.assert_allclose(np.abs(p.data), 0.1, atol=1e-6)
        assert p.data[0] < 0 < p.data[1]

    def test_identical_gradients_identical_updates(self):
        rng = np.random.default_rng(4)
        grads = [rng.normal(size=(3, 2)) for _ in range(5)]
        results = []
        for _ in range(2):
            p = Tensor(np.zeros((3, 2)), requires_grad=True)
            opt = Optimizer([p], kind="adam", lr=0.01)
            for g in grads:
                p.grad = g.copy()
                opt.step()
            results.append(p.data.copy())
        assert np.array_equal(results[0], results[1])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Optimizer([], kind="rmsprop")


class TestTraining:
    def make_dataset(self, n_train=60, n_test=40, seed=0):
        task = TK.make_task("exactly-one")
        return task, task.make_data(seed=seed, n_labeled=n_train, n_unlabeled=0, n_test=n_test, noise=0.2)

    def test_supervised_reduction_when_weights_off(self):
        task, ds = self.make_dataset()
        cfg = task.default_config(seed=0, epochs=12, batch_size=16, lr=0.01)
        cfg.weights.alpha = cfg.weights.beta = 0.0
        net, rows = run_training(ds, cfg)
        assert rows[-1]["acc_test"] >= 0.9
        assert rows[-1]["loss_cnf"] >= 0.0 and rows[-1]["loss_total"] == pytest.approx(rows[-1]["loss_base"])

    def test_metrics_row_columns(self):
        task, ds = self.make_dataset(n_train=20, n_test=10)
        cfg = task.default_config(seed=0, epochs=1)
        net, rows = run_training(ds, cfg)
        assert set(rows[0]) == {
            "epoch",
            "loss_total",
            "loss_base",
            "loss_cnf",
            "loss_bound",
            "loss_sum",
            "loss_hint",
            "acc_test",
        }

    def test_determinism_bitwise(self):
        task, ds = self.make_dataset(n_train=30, n_test=20)
        outputs = []
        for _ in range(2):
            cfg = task.default_config(seed=7, epochs=2)
            net, rows = run_training(ds, cfg)
            outputs.append(format_metrics(rows))
        assert outputs[0] == outputs[1]

    def test_nan_aborts_with_term_and_batch(self):
        task, ds = self.make_dataset(n_train=40, n_test=10)
        cfg = task.default_config(seed=0, epochs=2, lr=1e200, optimizer="sgd")
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged, match=r"(base|cnf|bound|total).*batch \d+"):
            run_training(ds, cfg)


class TestInferenceTrick:
    def test_complete_board_unchanged(self):
        task = TK.make_task("sudoku4")
        net = task.build_net(0)
        board = np.array(TK.D.solved_boards(4)[0])
        assert np.array_equal(predict_with_inference_trick(net, board, task), board)

    def test_single_empty_cell_filled_with_argmax(self):
        task = TK.make_task("sudoku4")
        net = task.build_net(0)
        board = np.array(TK.D.solved_boards(4)[3])
        cell = 7
        digit = board[cell]
        board[cell] = 0
        filled = predict_with_inference_trick(net, board, task)
        probs = task.cell_probs(net, board)
        assert filled[cell] == np.argmax(probs[cell]) + 1
        assert np.count_nonzero(filled == 0) == 0
        board[cell] = digit

    def test_terminates_and_fills_everything(self):
        task = TK.make_task("sudoku4")
        net = task.build_net(1)
        board = np.zeros(16, dtype=np.int64)
        filled = predict_with_inference_trick(net, board, task)
        assert np.all((1 <= filled) & (filled <= 4))

    def test_lowest_index_tie_break(self):
        class Flat:
            side = 2

            def cell_probs(self, net, q):
                return np.full((4, 2), 0.5)

        filled = predict_with_inference_trick(None, np.zeros(4, dtype=np.int64), Flat())
        # all probabilities equal: cells fill in index order with digit 1
        assert filled.tolist() == [1, 1, 1, 1]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = Mlp((6, 5, 3), head="sigmoid", seed=3)
        opt = Optimizer(net.params(), kind="adam", lr=0.01)
        path = save_checkpoint(str(tmp_path / "ck"), net, opt, meta={"task": "exactly-one"})
        loaded, meta = load_checkpoint(path)
        assert meta["task"] == "exactly-one"
        assert loaded.layer_dims == net.layer_dims and loaded.head == net.head
        for a, b in zip(net.params(), loaded.params()):
            assert np.array_equal(a.data, b.data)

    def test_version_checked(self, tmp_path):
        net = Mlp((3, 2), seed=0)
        path = save_checkpoint(str(tmp_path / "ck"), net)
        blob = dict(np.load(path, allow_pickle=False))
        blob["format_version"] = np.array(99)
        np.savez(path, **blob)
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(path)


class TestMetricsFormat:
    def test_header_and_determinism(self):
        rows = [dict(epoch=1.0, loss_total=0.5, loss_base=0.0, loss_cnf=0.5, loss_bound=0.1, loss_sum=0.0, loss_hint=0.0, acc_test=0.25)]
        text = format_metrics(rows)
        assert text.splitlines()[0] == "epoch,loss_total,loss_base,loss_cnf,loss_bound,loss_sum,loss_hint,acc_test"
        assert text == format_metrics(rows)