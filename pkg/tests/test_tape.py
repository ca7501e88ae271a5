"""Gradient correctness of the reverse-mode tape against finite differences."""

import numpy as np
import pytest

from finn import tape as T
from finn.errors import TapeError
from finn.tape import Tape, Var


def central_diff(f, x, h=1e-6):
    """Independent finite-difference oracle, elementwise over x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


def grad_of(build, x):
    tape = Tape()
    leaf = tape.leaf(x)
    out = build(leaf)
    return tape.gradient(out, [leaf])[0]


def test_square_at_three():
    g = grad_of(lambda x: x * x, np.asarray(3.0))
    assert g == pytest.approx(6.0, abs=1e-12)


def test_tanh_at_zero():
    g = grad_of(lambda x: T.tanh(x), np.asarray(0.0))
    assert g == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name,build", [
    ("add", lambda x: (x + x[::-1]).sum()),
    ("add_k", lambda x: (x + 2.5).sum()),
    ("sub", lambda x: (x - 3.0 * x[::-1]).sum()),
    ("rsub", lambda x: (1.0 - x).sum()),
    ("neg", lambda x: (-x).sum()),
    ("mul", lambda x: (x * x[::-1]).sum()),
    ("mul_k", lambda x: (0.7 * x).sum()),
    ("div", lambda x: (x / (x[::-1] + 2.0)).sum()),
    ("rdiv", lambda x: (1.0 / (x + 2.0)).sum()),
    ("pow", lambda x: ((x + 2.0) ** 1.7).sum()),
    ("exp", lambda x: T.exp(x).sum()),
    ("log", lambda x: T.log(x + 2.0).sum()),
    ("sqrt", lambda x: T.sqrt(x + 2.0).sum()),
    ("tanh", lambda x: T.tanh(x).sum()),
    ("sigmoid", lambda x: T.sigmoid(x).sum()),
    ("softplus", lambda x: T.softplus(x).sum()),
    ("slice", lambda x: (x[1:] * x[:-1]).sum()),
    ("index", lambda x: x[2] * x[0]),
    ("cat", lambda x: (T.cat([x[:2], 1.5, x[2:]]) ** 2.0).sum()),
    ("stack", lambda x: (T.stack([x, 2.0 * x]) * 0.5).sum()),
    ("reshape", lambda x: (x.reshape((2, 3)) * 1.5).sum()),
    ("mean", lambda x: (x * x).mean()),
    ("clip", lambda x: (T.clip(x, -0.8, 0.8) * x).sum()),
])
def test_gradient_matches_finite_differences(name, build):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.uniform(-0.7, 0.7, size=6)  # inside clip bounds, away from saturation

    def scalar_fn(v):
        tape = Tape()
        out = build(tape.leaf(v))
        return float(T.value_of(out))

    g = grad_of(build, x)
    g_fd = central_diff(scalar_fn, x)
    assert np.allclose(g, g_fd, rtol=1e-4, atol=1e-8), (name, g, g_fd)


def test_linear_gradients():
    rng = np.random.default_rng(7)
    x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)

    tape = Tape()
    lx, lw, lb = tape.leaf(x), tape.leaf(w), tape.leaf(b)
    out = (T.linear(lx, lw, lb) ** 2.0).sum()
    gx, gw, gb = tape.gradient(out, [lx, lw, lb])

    def f(which, v):
        parts = {"x": x, "w": w, "b": b}
        parts[which] = v
        y = parts["x"] @ parts["w"].T + parts["b"]
        return float((y ** 2).sum())

    assert np.allclose(gx, central_diff(lambda v: f("x", v), x), rtol=1e-5, atol=1e-8)
    assert np.allclose(gw, central_diff(lambda v: f("w", v), w), rtol=1e-5, atol=1e-8)
    assert np.allclose(gb, central_diff(lambda v: f("b", v), b), rtol=1e-5, atol=1e-8)


def test_broadcast_scalar_times_vector():
    tape = Tape()
    s = tape.leaf(2.0)
    v = tape.leaf(np.array([1.0, 2.0, 3.0]))
    out = (s * v).sum()
    gs, gv = tape.gradient(out, [s, v])
    assert gs == pytest.approx(6.0)
    assert np.allclose(gv, 2.0)


def test_untouched_leaf_gets_zero_gradient():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 2.0]))
    b = tape.leaf(np.array([3.0, 4.0]))
    out = (a * a).sum()
    ga, gb = tape.gradient(out, [a, b])
    assert np.allclose(ga, [2.0, 4.0])
    assert np.array_equal(gb, np.zeros(2))


def test_evaluation_is_deterministic():
    def run():
        tape = Tape()
        x = tape.leaf(np.array([0.3, -0.2, 0.9]))
        out = (T.tanh(x * 2.0) - x / 3.0).sum()
        return float(T.value_of(out)), tape.gradient(out, [x])[0]

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert np.array_equal(g1, g2)


def test_backward_requires_scalar_output():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    with pytest.raises(TapeError):
        tape.backward(x + 1.0)


def test_backward_rejects_foreign_output():
    tape = Tape()
    other = Tape()
    y = other.leaf(1.0)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_constants_receive_no_gradient():
    tape = Tape()
    x = tape.leaf(2.0)
    k = tape.constant(5.0)
    out = x * k
    adj = tape.backward(out)
    assert adj[x.idx] == pytest.approx(5.0)
