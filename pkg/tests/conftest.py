"""Shared test helpers: finite-difference gradient checking and tiny configs."""

import pytest

from hallmarks.autodiff import Tensor
from hallmarks.model import ModelConfig


def fd_gradcheck(make_loss, leaves, h=1e-5, tol=1e-4):
    """Compare autodiff gradients of ``make_loss()`` against central finite
    differences for every entry of every leaf tensor.

    ``make_loss`` must rebuild the graph from the current leaf data on each
    call and return a scalar Tensor. Returns the worst relative error.
    """
    for t in leaves:
        t.zero_grad()
    loss = make_loss()
    loss.backward()
    grads = [t.grad.copy() for t in leaves]
    worst = 0.0
    for t, g in zip(leaves, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = make_loss().item()
            flat[idx] = orig - h
            down = make_loss().item()
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            ad = gflat[idx]
            rel = abs(fd - ad) / max(abs(fd) + abs(ad), 1e-4)
            worst = max(worst, rel)
    assert worst < tol, f"gradient mismatch: worst relative error {worst}"
    return worst


def rand_tensor(rng, shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


@pytest.fixture
def tiny_config():
    """The gradient-check configuration: 1 layer, 8 wide, 2 heads."""
    return ModelConfig(vocab_size=20, n_layers=1, hidden_size=8, n_heads=2,
                       ffn_size=16, max_len=6, n_labels=3, dropout=0.0)
