import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))

from robnav.intervals import IntervalMatrix, IntervalVector, QcqpInstance, RobustnessSpec
from robnav.model import ProblemModel, Structure
from robnav.evaluate import PhantomSpec, generate_phantom


@pytest.fixture
def ratio_qcqp() -> QcqpInstance:
    """One variable, one constraint: (2 + r) x <= 2, x in [0, 10], maximize x.

    Level-r optimum is x = 2 / (2 + r); the whole front is x(r) = 2 / (2 + r).
    """
    spec = RobustnessSpec(
        matrix=IntervalMatrix(center=sp.csr_matrix(np.array([[2.0]])), offset=sp.csr_matrix(np.array([[1.0]]))),
        rhs=IntervalVector(center=np.array([2.0]), offset=np.array([0.0])),
    )
    return QcqpInstance(
        robustness=spec,
        objectives=np.array([[-1.0]]),
        lower=np.array([0.0]),
        upper=np.array([10.0]),
        split_negative=False,
    )


@pytest.fixture
def tiny_model() -> ProblemModel:
    """4 voxels, 2 beamlets, two overlapping structures."""
    d = sp.csr_matrix(np.array([[1.0, 2.0], [3.0, 5.0], [0.5, 0.0], [2.0, 2.0]]))
    return ProblemModel(
        num_voxels=4,
        num_beamlets=2,
        dose_matrix=d,
        structures=(
            Structure("target", np.array([0, 1]), lower_bound=1.0, upper_bound=8.0, is_constrained=True, is_optimized=True),
            Structure("risk", np.array([1, 2, 3]), lower_bound=0.0, upper_bound=6.0, is_constrained=True, is_optimized=True),
        ),
        fluence_lower=np.zeros(2),
        fluence_upper=np.full(2, 10.0),
    )


@pytest.fixture(scope="session")
def small_phantom() -> ProblemModel:
    return generate_phantom(PhantomSpec(grid=10, beamlets=6), seed=0)


@pytest.fixture(scope="session")
def tiny_phantom() -> ProblemModel:
    return generate_phantom(PhantomSpec(grid=6, beamlets=2, single_objective=True), seed=1)


def random_robustness_spec(rng: np.random.Generator, n_max: int = 4, m_max: int = 6,
                           density: float = 0.8, rhs_uncertain: bool = True) -> RobustnessSpec:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    a_c = rng.uniform(-2.0, 2.0, size=(m, n))
    a_c[rng.random((m, n)) > density] = 0.0
    a_d = rng.uniform(0.0, 1.0, size=(m, n)) * (a_c != 0)
    b_c = rng.uniform(-1.0, 3.0, size=m)
    b_d = rng.uniform(0.0, 0.5, size=m) if rhs_uncertain else np.zeros(m)
    return RobustnessSpec(
        matrix=IntervalMatrix(center=sp.csr_matrix(a_c), offset=sp.csr_matrix(a_d)),
        rhs=IntervalVector(center=b_c, offset=b_d),
    )
