import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

try:
    from threadpoolctl import threadpool_limits

    threadpool_limits(limits=1)
except Exception:
    pass

from specres import families as F
from specres import model as M


@pytest.fixture(scope="session")
def free_radial():
    return M.radial_model(M.PotentialSpec(), s=1.5, length=14.0)


@pytest.fixture(scope="session")
def small_well():
    return F.small_complex_well()


@pytest.fixture(scope="session")
def tuned_well():
    """Radial well with an outgoing singularity at lam = 1 (oracle-tuned)."""
    model, v0 = F.tuned_resonant_well(lam=1.0)
    return model, v0


@pytest.fixture(scope="session")
def real_well():
    return M.radial_model(M.square_well(-5.0, 1.0), s=1.5, length=14.0)


@pytest.fixture(scope="session")
def line_free():
    return M.line_model(M.PotentialSpec(), s=1.0, half_length=12.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
