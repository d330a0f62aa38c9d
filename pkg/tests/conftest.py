import numpy as np
import pytest

from anisoflow.integrand import Ellipsoid, Euclidean, OddPerturbed, Perturbed


def even_families(n=2):
    return [
        Euclidean(n),
        Ellipsoid(n, np.diag([1.0, 4.0] + [1.0] * (n - 1))),
        Perturbed(n, 0.05),
    ]


def all_families(n=2):
    return even_families(n) + [OddPerturbed(n, 0.05)]


@pytest.fixture(params=all_families(), ids=lambda F: F.family)
def family(request):
    return request.param


@pytest.fixture(params=even_families(), ids=lambda F: F.family)
def even_family(request):
    return request.param
