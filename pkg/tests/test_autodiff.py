import numpy as np
import pytest

import oracles
from weakloc import autodiff as ad
from weakloc.optim import (SGD, CHECKPOINT_MAGIC, ParamGroup, cosine_lr,
                           load_checkpoint, save_checkpoint)


def fd_check(build, x0: np.ndarray, n_probes=None, h=1e-5, tol=1e-4, seed=0):
    """Compare backward() against central differences on every (or a sampled
    subset of) input coordinate."""
    x = ad.Tensor(x0, requires_grad=True)
    loss = build(x)
    ad.backward(loss)
    analytic = x.grad
    rng = np.random.default_rng(seed)
    coords = list(np.ndindex(*x0.shape))
    if n_probes is not None and len(coords) > n_probes:
        coords = [coords[i] for i in rng.choice(len(coords), n_probes, replace=False)]
    for idx in coords:
        def f(v):
            xp = x0.copy()
            xp[idx] = v
            return float(build(ad.Tensor(xp)).data)

        fd = oracles.central_diff(f, x0[idx], h)
        assert oracles.rel_err(fd, analytic[idx]) < tol, \
            f"{idx}: fd={fd} analytic={analytic[idx]}"


class TestForwardValues:
    def test_relu(self):
        out = ad.relu(ad.Tensor([-1.0, 2.0]))
        assert list(out.data) == [0.0, 2.0]

    def test_sigmoid(self):
        assert float(ad.sigmoid(ad.Tensor(0.0)).data) == 0.5

    def test_conv_ones_filter_sums_input(self):
        x = ad.Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        w = ad.Tensor(np.ones((1, 1, 3, 3)))
        out = ad.conv2d(x, w, stride=1, pad=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 36.0

    def test_conv_shape_mismatch_reports_shapes(self):
        x = ad.Tensor(np.zeros((1, 2, 4, 4)))
        w = ad.Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\)"):
            ad.conv2d(x, w)

    def test_matmul_shapes(self):
        out = ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 4))))
        assert out.shape == (2, 4)
        assert np.all(out.data == 3.0)


class TestBackwardBasics:
    def test_sum_gives_ones(self):
        w = ad.Tensor(np.array([3.0, -1.0, 2.0]), requires_grad=True)
        ad.backward(ad.sum_(w))
        assert np.array_equal(w.grad, np.ones(3))

    def test_sum_of_squares(self):
        w = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        ad.backward(ad.sum_(ad.mul(w, w)))
        assert np.allclose(w.grad, [2.0, 4.0])

    def test_non_scalar_rejected(self):
        w = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.backward(ad.mul(w, 2.0))

    def test_accumulates_without_reset(self):
        w = ad.Tensor(np.array([1.0]), requires_grad=True)
        ad.backward(ad.sum_(w))
        ad.backward(ad.sum_(ad.mul(w, 3.0)))
        assert w.grad[0] == 4.0

    def test_shared_node_visited_once(self):
        w = ad.Tensor(np.array([2.0]), requires_grad=True)
        shared = ad.mul(w, 3.0)
        loss = ad.sum_(ad.add(shared, shared))
        ad.backward(loss)
        assert w.grad[0] == 6.0

    def test_no_grad_records_nothing(self):
        w = ad.Tensor(np.ones(2), requires_grad=True)
        with ad.no_grad():
            out = ad.mul(w, w)
        assert not out.requires_grad
        assert out._parents == ()


class TestOpGradients:
    """Randomized finite-difference checks, 100 trials per op."""

    def _run(self, build, shape, trials=100, probes=4, scale=1.0):
        rng = np.random.default_rng(12)
        for t in range(trials):
            x0 = rng.normal(scale=scale, size=shape)
            fd_check(build, x0, n_probes=probes, seed=t)

    def test_add_broadcast(self):
        c = np.array([0.5, -1.0, 2.0])
        self._run(lambda x: ad.sum_(ad.mul(ad.add(x, c), ad.add(x, c))), (2, 3))

    def test_mul(self):
        c = np.arange(1.0, 7.0).reshape(2, 3)
        self._run(lambda x: ad.sum_(ad.mul(x, c)), (2, 3))

    def test_relu(self):
        # keep samples away from the kink at 0
        rng = np.random.default_rng(5)
        for t in range(100):
            x0 = rng.normal(size=(3, 3))
            x0 = np.where(np.abs(x0) < 1e-2, 0.5, x0)
            fd_check(lambda x: ad.sum_(ad.relu(x)), x0, seed=t)

    def test_sigmoid(self):
        self._run(lambda x: ad.sum_(ad.sigmoid(x)), (2, 4))

    def test_exp(self):
        self._run(lambda x: ad.sum_(ad.exp(x)), (5,))

    def test_clip(self):
        rng = np.random.default_rng(6)
        for t in range(100):
            x0 = rng.normal(scale=2.0, size=(6,))
            x0 = x0[np.abs(np.abs(x0) - 1.5) > 1e-2][:4]
            if x0.size == 0:
                continue
            fd_check(lambda x: ad.sum_(ad.mul(ad.clip(x, -1.5, 1.5), x)), x0, seed=t)

    def test_mean_axis(self):
        self._run(lambda x: ad.sum_(ad.mul(ad.mean(x, axis=1), np.array([1.0, 2.0]))),
                  (2, 5))

    def test_reshape_transpose_slice(self):
        def build(x):
            y = ad.transpose(ad.reshape(x, (2, 6)), (1, 0))
            return ad.sum_(ad.mul(y[2:5, :], 3.0))

        self._run(build, (3, 4))

    def test_gather_with_repeats(self):
        idx = np.array([0, 2, 2, 1])

        def build(x):
            g = ad.gather(x, idx, axis=0)
            return ad.sum_(ad.mul(g, g))

        self._run(build, (3, 2))

    def test_matmul(self):
        b = np.arange(6.0).reshape(3, 2) / 3.0
        self._run(lambda x: ad.sum_(ad.sigmoid(ad.matmul(x, b))), (2, 3))

    def test_linear(self):
        w = np.arange(6.0).reshape(3, 2) / 5.0
        bias = np.array([0.1, -0.2])
        self._run(lambda x: ad.sum_(ad.linear(x, w, bias)), (4, 3))

    def test_conv2d_stride1_pad0(self):
        w = np.random.default_rng(0).normal(size=(2, 1, 3, 3))
        self._run(lambda x: ad.sum_(ad.mul(ad.conv2d(x, w), 2.0)), (1, 1, 5, 5),
                  trials=50, probes=5)

    def test_conv2d_stride2_pad1(self):
        w = np.random.default_rng(1).normal(size=(3, 2, 3, 3))
        b = np.array([0.3, -0.1, 0.2])
        self._run(lambda x: ad.sum_(ad.sigmoid(ad.conv2d(x, w, b, stride=2, pad=1))),
                  (1, 2, 6, 6), trials=50, probes=5)

    def test_conv2d_weight_gradient(self):
        x0 = np.random.default_rng(2).normal(size=(1, 2, 6, 6))
        rng = np.random.default_rng(3)
        for t in range(50):
            w0 = rng.normal(size=(2, 2, 3, 3))
            fd_check(lambda w: ad.sum_(ad.mul(ad.conv2d(x0, w, stride=2, pad=1), 1.5)),
                     w0, n_probes=5, seed=t)

    def test_attach_scalar_bridges_external_grads(self):
        x0 = np.random.default_rng(4).normal(size=(5,))

        def build(x):
            # loss = sum(sigmoid(x) * c) expressed through an external bridge
            s = ad.sigmoid(x)
            c = np.array([1.0, -2.0, 0.5, 3.0, -1.0])
            value = float((s.data * c).sum())
            return ad.attach_scalar(value, [(s, c)])

        fd_check(build, x0)


class TestSGD:
    def _param(self, values):
        return ad.Tensor(np.array(values, dtype=float), requires_grad=True, name="w")

    def test_zero_grad_zero_decay_fixed_point(self):
        p = self._param([1.0, 2.0])
        opt = SGD([ParamGroup([p], 1.0, 0.0)], momentum=0.9)
        p.grad = np.zeros(2)
        opt.step(0.1)
        assert np.array_equal(p.data, [1.0, 2.0])

    def test_first_step_is_lr_times_grad(self):
        p = self._param([1.0])
        opt = SGD([ParamGroup([p], 1.0, 0.0)], momentum=0.9)
        p.grad = np.array([2.0])
        opt.step(0.1)
        assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0)

    def test_two_steps_momentum_recursion(self):
        # constant gradient g: total change lr*g*(1 + 1.9)
        p = self._param([0.0])
        opt = SGD([ParamGroup([p], 1.0, 0.0)], momentum=0.9)
        for _ in range(2):
            p.grad = np.array([1.0])
            opt.step(0.1)
            p.grad = None
        assert p.data[0] == pytest.approx(-0.1 * (1.0 + 1.9))

    def test_weight_decay_enters_velocity(self):
        p = self._param([2.0])
        opt = SGD([ParamGroup([p], 1.0, 0.5)], momentum=0.0)
        p.grad = np.array([0.0])
        opt.step(0.1)
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_lr_multiplier(self):
        p = self._param([0.0])
        opt = SGD([ParamGroup([p], 2.0, 0.0)], momentum=0.0)
        p.grad = np.array([1.0])
        opt.step(0.1)
        assert p.data[0] == pytest.approx(-0.2)

    def test_missing_grad_rejected(self):
        p = self._param([1.0])
        opt = SGD([ParamGroup([p], 1.0, 0.0)])
        with pytest.raises(ValueError):
            opt.step(0.1)

    def test_updates_preserve_shape(self):
        p = ad.Tensor(np.ones((3, 4)), requires_grad=True)
        opt = SGD([ParamGroup([p], 1.0, 1e-4)])
        p.grad = np.ones((3, 4))
        opt.step(0.01)
        assert p.data.shape == (3, 4)


class TestCosine:
    def test_start(self):
        assert cosine_lr(0, 50, 0.004) == 0.004

    def test_midpoint(self):
        assert cosine_lr(25, 50, 0.004) == pytest.approx(0.002, rel=1e-12)

    def test_last_epoch_of_fifty(self):
        want = oracles.cosine_lr_scalar(49, 50, 0.004)
        assert cosine_lr(49, 50, 0.004) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(3.947e-6, rel=1e-3)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            cosine_lr(50, 50, 0.004)
        with pytest.raises(ValueError):
            cosine_lr(-1, 50, 0.004)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = {
            "conv.weight": np.random.default_rng(0).normal(size=(2, 3, 3, 3)),
            "conv.bias": np.zeros(2),
            "scalar": np.array(1.5),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k], params[k])

    def test_wire_format(self, tmp_path):
        path = tmp_path / "one.ckpt"
        save_checkpoint(path, {"w": np.array([1.0, 2.0])})
        blob = path.read_bytes()
        assert blob[:8] == CHECKPOINT_MAGIC == b"WENDCKPT"
        assert blob[8:12] == (1).to_bytes(4, "little")          # version
        assert blob[12:16] == (1).to_bytes(4, "little")         # name length
        assert blob[16:17] == b"w"
        assert blob[17:21] == (1).to_bytes(4, "little")         # rank
        assert blob[21:25] == (2).to_bytes(4, "little")         # dim
        assert np.frombuffer(blob[25:], dtype="<f8").tolist() == [1.0, 2.0]

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_byte_identical_rewrite(self, tmp_path):
        params = {"a": np.arange(12.0).reshape(3, 4), "b": np.ones(5)}
        p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
        save_checkpoint(p1, params)
        save_checkpoint(p2, params)
        assert p1.read_bytes() == p2.read_bytes()


def test_training_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        w = ad.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        b = ad.Tensor(np.zeros(2), requires_grad=True)
        opt = SGD([ParamGroup([w], 1.0, 1e-4), ParamGroup([b], 1.0, 0.0)],
                  momentum=0.9)
        for step in range(20):
            x = rng.normal(size=(3, 4))
            out = ad.sigmoid(ad.linear(ad.Tensor(x), w, b))
            loss = ad.mean(ad.mul(out, out))
            opt.zero_grad()
            ad.backward(loss)
            opt.step(cosine_lr(step, 20, 0.1))
        return w.data.copy(), b.data.copy()

    w1, b1 = run()
    w2, b2 = run()
    assert w1.tobytes() == w2.tobytes()
    assert b1.tobytes() == b2.tobytes()
