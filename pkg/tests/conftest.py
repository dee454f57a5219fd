import numpy as np
import pytest

from bnpsens.model import Dataset, ModelSpec
from bnpsens.objective import KLAssembly
from bnpsens.optimizer import initialize, optimize
from bnpsens.sensitivity import build_pack


@pytest.fixture(scope="session")
def blob_problem():
    """Two well-separated 2-D blobs with a K=5 truncation; P = 33."""
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(loc=[0.0, 0.0], scale=0.3, size=(20, 2)),
                          rng.normal(loc=[3.0, 3.0], scale=0.4, size=(25, 2))])
    data = Dataset(points=pts)
    model = ModelSpec.for_data(data, K=5, alpha0=2.0)
    return data, model, KLAssembly(data, model)


@pytest.fixture(scope="session")
def blob_fit(blob_problem):
    data, model, asm = blob_problem
    fit = optimize(initialize(data, model, seed=1), data, model, assembly=asm)
    assert fit.converged
    return fit


@pytest.fixture(scope="session")
def blob_pack(blob_problem, blob_fit):
    data, model, asm = blob_problem
    return build_pack(blob_fit, data, model, assembly=asm)


@pytest.fixture(scope="session")
def line_problem():
    """Tiny 1-D two-cluster problem (K=2, P=6) for analytic checks."""
    rng = np.random.default_rng(42)
    pts = np.concatenate([rng.normal(-2.0, 0.5, size=12),
                          rng.normal(2.0, 0.5, size=8)])[:, None]
    data = Dataset(points=pts)
    model = ModelSpec.for_data(data, K=2, alpha0=1.5)
    return data, model, KLAssembly(data, model)


@pytest.fixture(scope="session")
def line_fit(line_problem):
    data, model, asm = line_problem
    fit = optimize(initialize(data, model, seed=3), data, model, assembly=asm)
    assert fit.converged
    return fit
