import pytest

from povmin import (
    ConstantConsumption,
    MarketParams,
    PovertySpec,
    ProblemSpec,
    ProportionalConsumption,
    validate,
)

CANONICAL_MARKET = MarketParams(r=0.02, mu=0.06, sigma=0.2, lam=0.04, A=0.0)


def constant_spec(l=0.5, rho=25.0, a=0.0, d=30.0, c=1.0, market=CANONICAL_MARKET, **mkt):
    if mkt:
        market = MarketParams(**{**market.__dict__, **mkt})
    return ProblemSpec(
        market=market,
        consumption=ConstantConsumption(c=c),
        poverty=PovertySpec(a=a, d=d, l=l, rho=rho),
    )


def proportional_spec(
    l=0.5, rho=25.0, a=10.0, d=30.0, kappa=0.05, market=CANONICAL_MARKET, **mkt
):
    if mkt:
        market = MarketParams(**{**market.__dict__, **mkt})
    return ProblemSpec(
        market=market,
        consumption=ProportionalConsumption(kappa=kappa),
        poverty=PovertySpec(a=a, d=d, l=l, rho=rho),
    )


@pytest.fixture(scope="session")
def canonical_constant():
    return validate(constant_spec())


@pytest.fixture(scope="session")
def canonical_proportional():
    return validate(proportional_spec())
