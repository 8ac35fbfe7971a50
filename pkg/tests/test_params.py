import math

import pytest

from tidecap.params import (
    DEFAULT_R1_FACTOR,
    DomainError,
    PhysicalParams,
    derive,
    from_groups,
    from_mu,
    nondimensionalize,
)


def test_unit_values():
    q = PhysicalParams(1.0, 1.0, 1.0, 4.0, 0.5)
    assert q.GM == 1.0
    assert q.p == pytest.approx(1.0)
    assert q.rho == pytest.approx(3.0 / (4.0 * math.pi))
    assert q.g == 1.0


@pytest.mark.parametrize("field", ["G", "M", "R", "b", "v0"])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_rejects_nonpositive_or_nonfinite(field, bad):
    kw = dict(G=1.0, M=1.0, R=1.0, b=1.0, v0=1.0)
    kw[field] = bad
    with pytest.raises(DomainError, match=field):
        PhysicalParams(**kw)


def test_rejects_bad_R1():
    with pytest.raises(DomainError, match="R1"):
        PhysicalParams(1, 1, 1, 1, 1, R1=-3.0)


def test_default_start_distance():
    q = PhysicalParams(1.0, 1.0, 1.0, 100.0, 0.1)
    assert q.start_distance == pytest.approx(DEFAULT_R1_FACTOR * q.r_plus_exact, rel=1e-15)
    assert q.with_R1(7.0).start_distance == 7.0


def test_lambda_plus_root():
    for p in (1e-6, 0.3, 4.0, 1e3, 1e8):
        q = PhysicalParams(1.0, 1.0, 1.0, 1.0, math.sqrt(1.0 / p))
        lam = q.lambda_plus
        assert abs(lam * lam + 0.5 * q.p * lam - 1.0) <= 1e-12 * max(1.0, 0.5 * q.p * lam)


def test_derive_groups():
    q = PhysicalParams(1.0, 1.0, 1.0, 1e4, math.sqrt(10.0) * 1e-4)
    g = derive(q)
    assert g.p == pytest.approx(1e3, rel=1e-12)
    assert g.beta == 1e4
    assert g.r_plus == pytest.approx(20.0, rel=1e-12)
    assert g.eta_plus == pytest.approx(0.05, rel=1e-12)
    assert g.kappa == pytest.approx(math.sqrt(10.0), rel=1e-12)
    assert g.capture_index == pytest.approx(0.05**5 * 1e6, rel=1e-12)
    assert g.r_plus_exact == pytest.approx(q.r_plus_exact, rel=1e-15)


def test_capture_index_power_law_at_unit_kappa():
    # capture_index = beta^(14 alpha - 12) kappa^-14 / 32 for this family
    for alpha in (6.0 / 7.0, 0.9, 1.0):
        for beta in (1e2, 1e3, 1e4):
            g = derive(from_groups(beta, 1.0, alpha), alpha)
            assert g.capture_index == pytest.approx(beta ** (14 * alpha - 12) / 32.0, rel=1e-9)


def test_c0_definition():
    g = derive(from_groups(1e3, 2.0, 0.9), 0.9)
    assert g.c0 == pytest.approx(2.0 * 1e3 ** (6.0 / 7.0 - 0.9), rel=1e-12)


def test_validate_regime():
    q = from_groups(1e3, 1.0, 1.0)
    derive(q, 1.0, validate_regime=True)
    with pytest.raises(DomainError):
        derive(q, 1.2, validate_regime=True)
    with pytest.raises(DomainError):
        derive(q, math.nan)


def test_from_mu_gives_r_plus():
    for mu, beta in ((20.0, 1e4), (5.0, 1e3)):
        g = derive(from_mu(mu, beta))
        assert g.r_plus == pytest.approx(mu, rel=1e-12)
        assert g.kappa == pytest.approx(math.sqrt(mu / 2.0), rel=1e-12)
    with pytest.raises(DomainError):
        from_mu(-1.0, 10.0)


def test_nondimensionalize_round_trip():
    q = PhysicalParams(G=6.674e-11, M=2e30, R=7e8, b=1e12, v0=3e4, R1=5e13)
    s = nondimensionalize(q)
    assert (s.params.G, s.params.M, s.params.R) == (1.0, 1.0, 1.0)
    back = s.restore()
    for name in ("G", "M", "R", "b", "v0", "R1"):
        assert getattr(back, name) == pytest.approx(getattr(q, name), rel=1e-12)
    # groups are scale free
    assert derive(s.params).p == pytest.approx(derive(q).p, rel=1e-12)
    assert derive(s.params).capture_index == pytest.approx(derive(q).capture_index, rel=1e-12)
