import numpy as np
import pytest

from nadlab import autodiff as ad
from nadlab.autodiff import Node
from nadlab.rng import Rng


def numeric_grad(fn, x, h=1e-6):
    out = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        out.ravel()[i] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * h)
    return out


def check_grad(build, x, rtol=1e-6):
    xn = Node(x)
    (g,) = ad.grad(build(xn), [xn], create_graph=False)
    fd = numeric_grad(lambda a: float(build(Node(a)).value), x)
    scale = np.abs(fd).max() + 1e-12
    assert np.abs(g.value - fd).max() / scale < rtol


def test_elementwise_chain():
    x = Rng(0).gaussian((4, 5))
    check_grad(lambda a: ad.nsum(ad.mul(ad.square(a), ad.add(a, 2.0))), x)


def test_broadcasting_unbroadcast():
    x = Rng(1).gaussian((3,))
    y = Rng(2).gaussian((4, 3))
    xn, yn = Node(x), Node(y)
    out = ad.nsum(ad.mul(xn, yn))
    gx, gy = ad.grad(out, [xn, yn], create_graph=False)
    assert gx.value.shape == (3,)
    assert np.allclose(gx.value, y.sum(axis=0))
    assert np.allclose(gy.value, np.broadcast_to(x, (4, 3)))


def test_matmul_batched():
    a = Rng(3).gaussian((2, 3, 4))
    b = Rng(4).gaussian((4, 5))
    an, bn = Node(a), Node(b)
    out = ad.nsum(ad.square(ad.matmul(an, bn)))
    ga, gb = ad.grad(out, [an, bn], create_graph=False)
    fd = numeric_grad(lambda m: float(np.sum((a @ m) ** 2)), b)
    assert np.abs(gb.value - fd).max() < 1e-5
    fd_a = numeric_grad(lambda m: float(np.sum((m @ b) ** 2)), a)
    assert np.abs(ga.value - fd_a).max() < 1e-5


def test_relu_subgradient_zero_at_kink():
    xn = Node(np.array([0.0, -1.0, 2.0]))
    (g,) = ad.grad(ad.nsum(ad.relu(xn)), [xn], create_graph=False)
    assert np.array_equal(g.value, [0.0, 0.0, 1.0])


def test_softplus_sigmoid_log_exp():
    x = Rng(5).gaussian((7,))
    check_grad(lambda a: ad.nsum(ad.softplus(a)), x)
    check_grad(lambda a: ad.nsum(ad.sigmoid(a)), x)
    check_grad(lambda a: ad.nsum(ad.log(ad.add(ad.square(a), 1.0))), x)
    check_grad(lambda a: ad.nsum(ad.exp(ad.mul(a, 0.3))), x)


def test_getitem_scatter_roundtrip():
    x = Rng(6).gaussian((6, 6))
    xn = Node(x)
    out = ad.nsum(ad.square(xn[::2, 1:4]))
    (g,) = ad.grad(out, [xn], create_graph=False)
    fd = numeric_grad(lambda a: float(np.sum(a[::2, 1:4] ** 2)), x)
    assert np.abs(g.value - fd).max() < 1e-6


def test_wrap_pad_fold_are_adjoint():
    rng = Rng(7)
    x = rng.gaussian((2, 5, 5))
    u = rng.gaussian((2, 7, 7))
    px = ad.wrap_pad2d(Node(x), 1).value
    fu = ad.wrap_fold2d(Node(u), 1).value
    assert abs(np.vdot(px, u) - np.vdot(x, fu)) < 1e-12


def test_patches_fold_are_adjoint():
    rng = Rng(8)
    x = rng.gaussian((3, 6, 6))
    patches = ad.patches2d(Node(x), 3)
    u = rng.gaussian(patches.value.shape)
    fu = ad.patches2d_fold(Node(u), (3, 6, 6), 3).value
    assert abs(np.vdot(patches.value, u) - np.vdot(x, fu)) < 1e-12


def test_max_last_axis_tie_breaks_to_lowest_index():
    x = np.array([[1.0, 3.0, 3.0, 0.0]])
    xn = Node(x)
    out = ad.max_last_axis(xn)
    assert out.value[0] == 3.0
    (g,) = ad.grad(ad.nsum(out), [xn], create_graph=False)
    assert np.array_equal(g.value, [[0.0, 1.0, 0.0, 0.0]])


def test_second_order_simple():
    # d2/dx2 of x^3 at x: 6x, via grad of grad
    x = np.array([1.5, -2.0])
    xn = Node(x)
    y = ad.nsum(ad.mul(ad.square(xn), xn))
    (g1,) = ad.grad(y, [xn], create_graph=True)
    (g2,) = ad.grad(ad.nsum(g1), [xn], create_graph=False)
    assert np.allclose(g2.value, 6 * x)


def test_grad_determinism_bit_identical():
    x = Rng(9).gaussian((8, 8))

    def run():
        xn = Node(x)
        out = ad.nsum(ad.relu(ad.matmul(xn, xn)))
        (g,) = ad.grad(out, [xn], create_graph=False)
        return g.value

    assert np.array_equal(run(), run())


def test_unused_input_gets_zero_gradient():
    xn, yn = Node(np.ones(3)), Node(np.ones(3))
    out = ad.nsum(xn)
    gx, gy = ad.grad(out, [xn, yn], create_graph=False)
    assert np.array_equal(gy.value, np.zeros(3))
    assert np.array_equal(gx.value, np.ones(3))


def test_node_rejects_node_value():
    with pytest.raises(TypeError):
        Node(Node(np.ones(1)))
