import numpy as np
import pytest


def numeric_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Fourth-order central differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place).

    The five-point stencil has O(h^4) truncation error, so a fairly large
    step keeps round-off small as well.
    """
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        vals = []
        for k in (2, 1, -1, -2):
            flat[i] = orig + k * h
            vals.append(f())
        flat[i] = orig
        p2, p1, m1, m2 = vals
        gflat[i] = (-p2 + 8 * p1 - 8 * m1 + m2) / (12 * h)
    return g


def max_rel_err(a, b, floor=1e-10):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def direction_swapped(net, seed=None):
    """Copy of a bidirectional ``net`` with forward/reverse cells exchanged and
    the decoder's first-layer input blocks exchanged to match."""
    from sgmnet.network import FusionNet

    twin = FusionNet(net.cell_kind, "bi", seed=0 if seed is None else seed, dtype=net.dtype, ch=net.ch)
    src, dst = net.registry(), twin.registry()
    for name, t in src.items():
        if name.startswith("fwd_cell."):
            name = "rev_cell." + name[len("fwd_cell."):]
        elif name.startswith("rev_cell."):
            name = "fwd_cell." + name[len("rev_cell."):]
        dst[name].data = t.data.copy()
    ch = net.ch
    for branch in twin.decoder.sdc1.branches():
        k = branch.kernel.data
        branch.kernel.data = np.concatenate([k[:, ch:], k[:, :ch]], axis=1)
    return twin


def randomize(net, rng, scale=0.3):
    """Replace every parameter (biases included) with random values."""
    for t in net.parameters():
        t.data = (rng.uniform(-scale, scale, size=t.shape)).astype(t.dtype)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
