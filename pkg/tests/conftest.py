import numpy as np
import pytest

from smoea.data import SyntheticParams, generate_synthetic
from smoea.network import build_toy_cnn
from smoea.pipeline import FineTuneConfig, finetune


def numerical_grad(f, x, eps=1e-5):
    """Central finite differences of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        hi = f(x)
        x[idx] = orig - eps
        lo = f(x)
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(b.ravel()), 1e-12)
    return np.linalg.norm((a - b).ravel()) / denom


def naive_conv2d(x, params):
    """Seven-loop direct-summation convolution oracle."""
    n, cin, h, w = x.shape
    s, p = params.stride, params.padding
    oh = (h + 2 * p - params.kernel_h) // s + 1
    ow = (w + 2 * p - params.kernel_w) // s + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, params.out_channels, oh, ow))
    for b in range(n):
        for o in range(params.out_channels):
            for i in range(oh):
                for j in range(ow):
                    acc = params.bias[o]
                    for c in range(cin):
                        for ki in range(params.kernel_h):
                            for kj in range(params.kernel_w):
                                acc += (
                                    xp[b, c, i * s + ki, j * s + kj]
                                    * params.weights[o, c, ki, kj]
                                )
                    out[b, o, i, j] = acc
    return out


@pytest.fixture(scope="session")
def toy_dataset():
    return generate_synthetic(SyntheticParams(seed=1))


@pytest.fixture(scope="session")
def trained_toy(toy_dataset):
    """Toy 4-conv CNN trained to (near) perfect accuracy on the synthetic set."""
    net = build_toy_cnn(seed=1)
    cfg = FineTuneConfig(lr=0.01, epochs=8, milestones=(4, 6), batch_size=32, seed=1)
    return finetune(net, toy_dataset, cfg)
