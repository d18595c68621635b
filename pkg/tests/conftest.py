import hypothesis
import numpy as np
import pytest

from otaccel.ot import EntropicOTProblem

hypothesis.settings.register_profile("default", deadline=None, print_blob=True)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def random_ot(rng, n, gamma, cost_scale=1.0):
    C = rng.uniform(0, cost_scale, (n, n))
    r = rng.dirichlet(np.ones(n))
    c = rng.dirichlet(np.ones(n))
    return EntropicOTProblem(C, gamma, r, c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
