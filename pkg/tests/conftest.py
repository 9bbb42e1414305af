import numpy as np
import pytest

from regmva.dataset import Dataset, load_segment

ACCEPTANCE_LINES = []


def make_dataset(X, Y):
    """Dataset from column-sample arrays; both are centered here."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X = X - X.mean(axis=1, keepdims=True)
    Y = Y - Y.mean(axis=1, keepdims=True)
    return Dataset(X, Y, tuple(f"x{i}" for i in range(X.shape[0])),
                   tuple(f"c{i}" for i in range(Y.shape[0])), np.zeros(X.shape[0]))


def random_dataset(rng, n, m, N, classes=False):
    X = rng.standard_normal((n, N))
    if classes:
        labels = np.arange(N) % m
        rng.shuffle(labels)
        Y = np.eye(m)[:, labels]
    else:
        Y = rng.standard_normal((m, n)) @ X + 0.5 * rng.standard_normal((m, N))
    return make_dataset(X, Y)


@pytest.fixture(scope="session")
def segment():
    return load_segment()


@pytest.fixture(scope="session")
def segment_std():
    return load_segment(standardize=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def subgradient_oracle(C, B, kind, gamma, epochs=50, steps=300):
    """Minimise ``Tr{U^T C U} - 2 Tr{U^T B} + gamma R(U)`` by plain subgradient descent.

    Step sizes decay geometrically per epoch and each epoch restarts from the
    best iterate so far. Returns the best objective value seen.
    """
    C = np.asarray(C, dtype=float)
    B = np.asarray(B, dtype=float)
    L = float(np.linalg.eigvalsh(C)[-1])

    def f(U):
        if kind == "l1":
            r = np.sum(np.abs(U))
        else:
            r = np.sum(np.linalg.norm(U, axis=1))
        return np.sum(U * (C @ U)) - 2.0 * np.sum(U * B) + gamma * r

    def sub(U):
        g = 2.0 * (C @ U - B)
        if kind == "l1":
            return g + gamma * np.sign(U)
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        return g + gamma * np.divide(U, norms, out=np.zeros_like(U), where=norms > 0)

    best = np.zeros_like(B)
    fbest = f(best)
    step = 0.5 / L
    for _ in range(epochs):
        U = best.copy()
        for _ in range(steps):
            U = U - step * sub(U)
            fu = f(U)
            if fu < fbest:
                best, fbest = U.copy(), fu
        step *= 0.7
    return float(fbest)
