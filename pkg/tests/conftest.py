import numpy as np
import pytest

from qtraj.instrument import (
    block_permutation_instrument,
    from_von_neumann,
    random_instrument,
    tensor_dark_instrument,
    unitary_family,
)
from qtraj.linalg import random_unitary


def rand_herm(d, rng):
    x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (x + x.conj().T) / 2


def rand_psd(d, rng, rank=None):
    r = d if rank is None else rank
    g = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
    return g @ g.conj().T


def unitary_instrument(d, k, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(k))
    w = w / w.sum()
    return unitary_family([random_unitary(d, rng) for _ in range(k)], w)


def tensor_example(seed, k=2, D=2):
    rng = np.random.default_rng(seed)
    b = random_instrument(2, k, seed)
    return tensor_dark_instrument(b, [random_unitary(D, rng) for _ in range(k)])


PI_GENERIC = [[0.3, 0.7], [0.6, 0.4]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def von_neumann2():
    return from_von_neumann([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])


@pytest.fixture
def block_example():
    return block_permutation_instrument(2, 2, PI_GENERIC, 3)


@pytest.fixture
def corpus():
    """Mixed bag of instruments used by the property checks."""
    out = [random_instrument(d, k, 100 * d + k) for d in (2, 3, 4) for k in (2, 3)]
    out.append(unitary_instrument(3, 3, 7))
    out.append(block_permutation_instrument(2, 2, PI_GENERIC, 3))
    out.append(tensor_example(11))
    return out


ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
