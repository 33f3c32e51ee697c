import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from oracles import random_spd, random_stiefel  # noqa: E402

from envdim import MomentPair  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_pair(rng, p, q=1, n=500, cond=50.0):
    """A random ``MomentPair`` with ``U = theta theta'``, ``theta`` p x q."""
    m = random_spd(p, rng, cond)
    theta = rng.standard_normal((p, q))
    return MomentPair.from_theta(m, theta, n)


def envelope_pair(rng, p, u, n=10_000, q=None):
    """Exact envelope-structured pair with a ``u``-dimensional envelope.

    ``M`` has distinct eigenvalues; ``U`` lives on ``u`` of its eigenvectors.
    """
    q = u if q is None else q
    basis = random_stiefel(p, p, rng)
    evals = np.sort(rng.uniform(0.5, 5.0, size=p))
    m = (basis * evals) @ basis.T
    m = 0.5 * (m + m.T)
    idx = rng.choice(p, size=u, replace=False)
    gamma = basis[:, idx]
    theta = gamma @ rng.uniform(0.5, 1.5, size=(u, q))
    return MomentPair.from_theta(m, theta, n), gamma


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "RESULTS", None):
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
