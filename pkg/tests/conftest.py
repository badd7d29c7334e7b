"""Shared independent oracles used by the test suite.

Each oracle recomputes an expected value by a route separate from the
implementation under test: nested loops for convolution, central finite
differences for gradients, exhaustive enumeration for search problems.
"""

import numpy as np
import pytest

from tdsasr.tensor import Tensor


def conv_time_loop_oracle(x, w, b, stride=1, padding=0):
    """Direct triple-loop temporal convolution on (T, width, c_in)."""
    t_in, width, c_in = x.shape
    k, _, c_out = w.shape
    xp = np.pad(x, ((padding, padding), (0, 0), (0, 0)))
    t_out = (t_in + 2 * padding - k) // stride + 1
    out = np.zeros((t_out, width, c_out))
    for t in range(t_out):
        for pos in range(width):
            for co in range(c_out):
                acc = b[co]
                for tap in range(k):
                    for ci in range(c_in):
                        acc += xp[t * stride + tap, pos, ci] * w[tap, ci, co]
                out[t, pos, co] = acc
    return out


def matmul_loop_oracle(x, w, b=None):
    """Dot products one at a time over the last axis of x."""
    lead = x.shape[:-1]
    n_in, n_out = w.shape
    x2 = x.reshape(-1, n_in)
    out = np.zeros((x2.shape[0], n_out))
    for i in range(x2.shape[0]):
        for j in range(n_out):
            out[i, j] = sum(x2[i, m] * w[m, j] for m in range(n_in))
            if b is not None:
                out[i, j] += b[j]
    return out.reshape(lead + (n_out,))


def finite_difference(f, params, h=1e-5):
    """Central-difference gradients of scalar f() w.r.t. each Tensor in params."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def check_gradients(build_loss, params, h=1e-5, rtol=1e-4, atol=1e-7):
    """Compare autodiff grads of build_loss() against central differences.

    Returns the worst relative error seen; asserts every component is within
    rtol of the numeric estimate (atol floors tiny gradients).
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [np.array(p.grad, copy=True) for p in params]
    numeric = finite_difference(lambda: build_loss().item(), params, h=h)
    worst = 0.0
    for p, a, n in zip(params, analytic, numeric):
        denom = np.maximum(np.abs(n), atol / rtol)
        rel = np.abs(a - n) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert np.all(rel < rtol), (
            f"gradient mismatch (max rel err {rel.max():.3e}) for param of shape {p.shape}"
        )
    return worst


def binomial_3sigma(n, p):
    """Half-width of the 3-sigma band for a binomial proportion."""
    return 3.0 * np.sqrt(p * (1.0 - p) / n)


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)


def rand_tensor(rng, shape, requires_grad=True, scale=1.0):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=requires_grad)
