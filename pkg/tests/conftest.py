import numpy as np
import pytest

from wcamnet.tensor import Tensor


def numeric_grad(f, tensor: Tensor, index, step: float) -> float:
    """Central difference of scalar ``f()`` w.r.t. one entry of ``tensor``."""
    old = tensor.data[index]
    tensor.data[index] = old + step
    up = f().item()
    tensor.data[index] = old - step
    down = f().item()
    tensor.data[index] = old
    return (up - down) / (2 * step)


def gradcheck(f, tensors, step=1e-6, max_entries=None, seed=0, joint=False) -> float:
    """Worst norm-wise relative error between analytic and numeric gradients.

    ``f`` builds a scalar Tensor from ``tensors``; at most ``max_entries``
    random entries per tensor are probed. With ``joint`` the probed entries
    of all tensors form one vector and a single error is returned.
    """
    for t in tensors:
        t.grad = None
    f().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    pairs = []
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            flat = rng.choice(t.size, max_entries, replace=False)
        idx = [np.unravel_index(i, t.shape) for i in flat]
        a = np.array([analytic[i] for i in idx])
        n = np.array([numeric_grad(f, t, i, step) for i in idx])
        pairs.append((a, n))
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-10)
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    if joint:
        a, n = (np.concatenate(v) for v in zip(*pairs))
        return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-10))
    return worst


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand(rng, *shape, dtype=np.float64, requires_grad=True, scale=1.0):
    return Tensor((scale * rng.standard_normal(shape)).astype(dtype), requires_grad=requires_grad)
