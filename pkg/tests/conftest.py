import numpy as np


class ScriptedRng:
    """Stand-in generator that replays scripted draws, for exact MH-ratio checks."""

    def __init__(self, uniforms=(), normals=(), betas=(), gammas=None):
        self.uniforms = list(uniforms)
        self.normals = list(normals)
        self.betas = list(betas)
        self.gammas = gammas

    def random(self, size=None):
        if size is None:
            return self.uniforms.pop(0)
        return np.array([self.uniforms.pop(0) for _ in range(int(np.prod(size)))]).reshape(size)

    def standard_normal(self, size=None):
        if size is None:
            return self.normals.pop(0)
        return np.array([self.normals.pop(0) for _ in range(int(np.prod(size)))]).reshape(size)

    def beta(self, a, b):
        return self.betas.pop(0)

    def gamma(self, shape, scale=1.0, size=None):
        if self.gammas is not None:
            return self.gammas
        return np.ones(size) if size is not None else 1.0


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_criterion(number, passed, detail):
    """Store and print one pass/fail line; the caller asserts ``passed``."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
