import numpy as np
import pytest

from robinv.geometry import BaseSet, EllitopeSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_psd(rng, n, rank=None):
    F = rng.standard_normal((n, rank or n))
    return F @ F.T


def random_ellitope(rng, N, K, kind="box", p=4.0):
    """K random PSD matrices whose sum is positive definite."""
    T = np.stack([random_psd(rng, N, rank=max(1, N // 2)) for _ in range(K)])
    T[0] += 0.1 * np.eye(N)
    base = {"box": BaseSet.box(K), "pball": BaseSet.pball(K, p), "simplex": BaseSet.simplex(K)}[kind]
    return EllitopeSpec(T, base)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
