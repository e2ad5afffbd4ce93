"""Shared fixtures: the 1D fractional model problem -L u = 1 on (-1, 1), u = 0 outside."""

import pytest

from levyperron.models.domain import Domain
from levyperron.models.fields import ExteriorDatum
from levyperron.models.kernel import Kernel
from levyperron.models.lattice import Lattice
from levyperron.models.problem import BellmanProblem, PairCoefficients
from levyperron.schemas.params import EllipticityParams, QuadratureParams
from levyperron.services.kernels import make_anisotropic_kernel, make_fractional_kernel

# 2/65 puts 64 lattice nodes strictly inside (-1, 1)
MODEL_H = 2.0 / 65.0


@pytest.fixture
def params() -> EllipticityParams:
    return EllipticityParams(sigma=1.5, lambda_=0.15, Lambda=1.0)


@pytest.fixture
def kernel(params: EllipticityParams) -> Kernel:
    return make_fractional_kernel(params, 1.0, dim=1, label="frac")


@pytest.fixture
def one_sided(params: EllipticityParams) -> Kernel:
    return make_anisotropic_kernel(params, 1.0, dim=1, weight_negative=0.0, label="one_sided")


@pytest.fixture
def interval() -> Domain:
    return Domain.ball([0.0], 1.0)


@pytest.fixture
def quad() -> QuadratureParams:
    return QuadratureParams(truncation=8.0)


@pytest.fixture
def model_problem(kernel: Kernel, interval: Domain, params: EllipticityParams) -> BellmanProblem:
    return BellmanProblem(
        pairs=(PairCoefficients("a0", "b0", kernel, c=0.0, f=-1.0),),
        domain=interval,
        datum=ExteriorDatum.constant(0.0),
        params=params,
    )


@pytest.fixture
def model_lattice(interval: Domain) -> Lattice:
    return Lattice(interval, MODEL_H)
