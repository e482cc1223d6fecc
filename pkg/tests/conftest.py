import numpy as np
import pytest

from igcl import kernels
from igcl.rng import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    module = kernels.backends()[request.param]
    monkeypatch.setattr(kernels, "icl_upper", module.icl_upper)
    monkeypatch.setattr(kernels, "contrast_samples", module.contrast_samples)
    return request.param


def brute_force_upper(Z, mu, sigma, tau):
    """Direct double loop over anchors and candidates."""
    b = Z.shape[0]
    total = 0.0
    for n in range(b):
        logits = []
        for k in range(b):
            delta = Z[k] - Z[n]
            logits.append(delta @ mu[n] / tau + np.sum(sigma[n] ** 2 * delta**2) / (2 * tau**2))
        logits = np.array(logits)
        m = logits.max()
        total += m + np.log(np.exp(logits - m).sum())
    return total / b
