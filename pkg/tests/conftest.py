import numpy as np
import pytest

from vortexlab.meanfield import DensitySeries, lamb_oseen


@pytest.fixture(scope="session")
def lamb_series_analytic():
    """Closed-form Lamb-Oseen snapshots (sigma=1, t0=0.25) on the 256 grid."""
    times = np.arange(0.0, 1.0001, 0.05)
    return DensitySeries([lamb_oseen(1.0, 0.25, float(t), 12.0, 256) for t in times])


@pytest.fixture(scope="session")
def lamb_fields(lamb_series_analytic):
    from vortexlab.regularity import log_fields

    return log_fields(lamb_series_analytic)
