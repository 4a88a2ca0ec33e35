import numpy as np
import pytest

from sweeprecon import autodiff as ad


def numeric_grad(f, x, eps=1e-6):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_op(build, params, tol=1e-7):
    """Run backward once and compare each parameter's gradient to FD."""
    loss = build()
    ad.backward(loss)
    for p in params:
        got = p.grad
        want = numeric_grad(lambda: float(build().data), p.data)
        scale = np.maximum(np.abs(want), 1e-3)
        assert np.max(np.abs(got - want) / scale) < tol, p.name


class TestOps:
    def test_matmul_grads(self):
        rng = np.random.default_rng(0)
        x = ad.parameter(rng.standard_normal((4, 3)), "x")
        w = ad.parameter(rng.standard_normal((3, 5)), "w")
        t = rng.standard_normal((4, 5))
        check_op(lambda: ad.sum_squared_error(ad.matmul(x, w), t), [x, w])

    def test_add_bias_grads(self):
        rng = np.random.default_rng(1)
        x = ad.parameter(rng.standard_normal((6, 3)), "x")
        b = ad.parameter(rng.standard_normal(3), "b")
        t = rng.standard_normal((6, 3))
        check_op(lambda: ad.sum_squared_error(ad.add_bias(x, b), t), [x, b])

    def test_sin_scale_grads(self):
        rng = np.random.default_rng(2)
        x = ad.parameter(rng.standard_normal((5, 2)), "x")
        t = rng.standard_normal((5, 2))
        check_op(
            lambda: ad.sum_squared_error(ad.sin(ad.scale(x, 3.0)), t), [x]
        )

    def test_sigmoid_grads(self):
        rng = np.random.default_rng(3)
        x = ad.parameter(rng.standard_normal((7, 1)), "x")
        t = rng.uniform(0, 1, (7, 1))
        check_op(lambda: ad.sum_squared_error(ad.sigmoid(x), t), [x])

    def test_masked_ce_grads(self):
        rng = np.random.default_rng(4)
        logits = ad.parameter(rng.standard_normal((6, 2)), "logits")
        valid = np.array([0, 2, 5])
        labels = np.array([1, 0, 1])
        check_op(
            lambda: ad.masked_softmax_cross_entropy(logits, valid, labels), [logits]
        )

    def test_add_fans_out_gradient(self):
        rng = np.random.default_rng(5)
        a = ad.parameter(rng.standard_normal((3, 3)), "a")
        t = rng.standard_normal((3, 3))
        check_op(lambda: ad.sum_squared_error(ad.add(a, a), t), [a])


class TestMaskedCE:
    def test_uniform_logits_value(self):
        # equal logits give probability 1/2 per class: CE = K log 2
        logits = ad.parameter(np.zeros((4, 2)))
        valid = np.arange(4)
        labels = np.array([0, 1, 0, 1])
        loss = ad.masked_softmax_cross_entropy(logits, valid, labels)
        assert float(loss.data) == pytest.approx(4 * np.log(2.0), abs=1e-12)

    def test_uniform_logits_gradient(self):
        logits = ad.parameter(np.zeros((3, 2)))
        loss = ad.masked_softmax_cross_entropy(
            logits, np.arange(3), np.array([0, 0, 1])
        )
        ad.backward(loss)
        expected = np.array([[-0.5, 0.5], [-0.5, 0.5], [0.5, -0.5]])
        assert np.abs(logits.grad - expected).max() < 1e-12

    def test_masked_rows_bitwise_inert(self):
        rng = np.random.default_rng(6)
        base = rng.standard_normal((8, 2))
        valid = np.array([1, 3, 4])
        labels = np.array([0, 1, 1])

        def run(data):
            logits = ad.parameter(data.copy())
            loss = ad.masked_softmax_cross_entropy(logits, valid, labels)
            ad.backward(loss)
            return loss.data.copy(), logits.grad.copy()

        loss_a, grad_a = run(base)
        tampered = base.copy()
        mask = np.ones(8, bool)
        mask[valid] = False
        tampered[mask] = 1e6 * rng.standard_normal((5, 2))
        loss_b, grad_b = run(tampered)
        assert loss_a.tobytes() == loss_b.tobytes()
        assert grad_a[valid].tobytes() == grad_b[valid].tobytes()
        assert np.all(grad_a[mask] == 0.0) and np.all(grad_b[mask] == 0.0)

    def test_empty_valid_set_zero_loss(self):
        logits = ad.parameter(np.ones((4, 2)))
        loss = ad.masked_softmax_cross_entropy(
            logits, np.array([], int), np.array([], int)
        )
        ad.backward(loss)
        assert float(loss.data) == 0.0
        assert np.all(logits.grad == 0.0)

    def test_large_logits_stable(self):
        logits = ad.parameter(np.array([[1000.0, -1000.0]]))
        loss = ad.masked_softmax_cross_entropy(
            logits, np.array([0]), np.array([0])
        )
        assert np.isfinite(float(loss.data))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


class TestBackward:
    def test_requires_scalar(self):
        x = ad.parameter(np.ones(3))
        y = ad.sin(x)
        with pytest.raises(ValueError):
            ad.backward(y)

    def test_stationary_point_zero_grads(self):
        # perfectly fitted: pred == target means zero gradient everywhere
        x = ad.parameter(np.array([[0.3, -0.2]]))
        w = ad.parameter(np.array([[1.0], [2.0]]))
        pred = ad.matmul(x, w)
        loss = ad.sum_squared_error(pred, pred.data.copy())
        ad.backward(loss)
        assert np.abs(w.grad).max() <= 1e-10
        assert np.abs(x.grad).max() <= 1e-10

    def test_reused_node_accumulates(self):
        x = ad.parameter(np.array(2.0))
        y = ad.add(x, x)  # d/dx (2x)^2 = 8x
        loss = ad.sum_squared_error(y, np.array(0.0))
        ad.backward(loss)
        assert float(y.data) == 4.0
        assert float(x.grad) == pytest.approx(16.0)

    def test_deep_chain_no_recursion_limit(self):
        x = ad.parameter(np.array(0.5))
        node = x
        for _ in range(5000):
            node = ad.scale(node, 1.0)
        loss = ad.sum_squared_error(node, np.array(0.0))
        ad.backward(loss)
        assert float(x.grad) == pytest.approx(1.0)

    def test_float32_pipeline(self):
        rng = np.random.default_rng(7)
        x = ad.parameter(rng.standard_normal((4, 3)).astype(np.float32))
        w = ad.parameter(rng.standard_normal((3, 2)).astype(np.float32))
        loss = ad.sum_squared_error(
            ad.sin(ad.matmul(x, w)), np.zeros((4, 2), np.float32)
        )
        ad.backward(loss)
        assert loss.data.dtype == np.float32
        assert w.grad.dtype == np.float32


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = ad.parameter(np.array([1.0, -2.0, 3.0]))
        opt = ad.Adam([p], lr=0.1)
        before = p.data.copy()
        for _ in range(5):
            p.grad = np.zeros(3)
            opt.step()
        assert np.array_equal(p.data, before)

    def test_descends_quadratic(self):
        p = ad.parameter(np.array([5.0]))
        opt = ad.Adam([p], lr=0.05)
        for _ in range(2000):
            opt.zero_grad()
            loss = ad.sum_squared_error(p, np.array([1.5]))
            ad.backward(loss)
            opt.step()
        assert float(p.data[0]) == pytest.approx(1.5, abs=1e-3)

    def test_matches_reference_formulas_one_step(self):
        p = ad.parameter(np.array([2.0]))
        opt = ad.Adam([p], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        p.grad = np.array([0.5])
        opt.step()
        m_hat = (0.1 * 0.5) / (1 - 0.9)
        v_hat = (0.001 * 0.25) / (1 - 0.999)
        expected = 2.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert float(p.data[0]) == pytest.approx(expected, abs=1e-15)
