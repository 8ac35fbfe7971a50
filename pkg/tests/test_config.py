import math

import pytest

from tidecap.config import ConfigError, parse_config, parse_grid

MINIMAL = """
G = 1
M = 1
R = 1
b = 10000
v0 = 3.1622776601683795e-4   # p = 1000
"""


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.params.b == 1e4
    assert (cfg.rtol, cfg.L_max, cfg.closure, cfg.stop, cfg.modes, cfg.mode_start) == (
        1e-10, 4, "point", "closest", "direct", "rest")
    echo = cfg.echo()
    assert echo["params"]["R1_resolved"] == pytest.approx(50 * cfg.params.r_plus_exact)
    assert "raw" not in echo


def test_group_forms():
    cfg = parse_config("beta = 1e4\nmu = 20\n")
    assert cfg.params.r_plus_exact == pytest.approx(20.0, rel=1e-4)
    cfg = parse_config("beta = 1e3\nkappa = 2\nalpha_exp = 0.9\n")
    assert cfg.alpha_exp == 0.9
    with pytest.raises(ConfigError, match="mu"):
        parse_config("beta = 1e4\nmu = 20\nalpha_exp = 0.9\n")
    with pytest.raises(ConfigError, match="kappa/mu"):
        parse_config("beta = 1e4\nmu = 20\nkappa = 3\n")
    with pytest.raises(ConfigError, match="beta"):
        parse_config("kappa = 3\n")
    with pytest.raises(ConfigError, match="not both"):
        parse_config(MINIMAL + "beta = 10\nkappa = 1\n")


@pytest.mark.parametrize(
    "extra,key",
    [
        ("rtol = fast", "rtol"),
        ("colour = blue", "colour"),
        ("L_max = 2.5", "L_max"),
        ("closure = magic", "closure"),
        ("stop = soon", "stop"),
        ("rtol = 2", "rtol"),
        ("L_max = 1", "L_max"),
        ("grid_degree = 4", "grid_degree"),
        ("b = 5", "b"),
        ("R1 = nan", "R1"),
        ("closure = ball\nquadrature_order = 2", "quadrature_order"),
    ],
)
def test_errors_name_the_key(extra, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(MINIMAL + extra + "\n")


def test_missing_and_malformed():
    with pytest.raises(ConfigError, match="v0"):
        parse_config("G = 1\nM = 1\nR = 1\nb = 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just words\n")
    with pytest.raises(ConfigError, match="b"):
        parse_config(MINIMAL.replace("10000", "-1"))


def test_grid():
    rows = parse_grid("beta, kappa\n1e3, 3.16\n1e4 3.16 0.9\n\n# note\n1e5 3.16\n")
    assert rows == [(1e3, 3.16, 1.0), (1e4, 3.16, 0.9), (1e5, 3.16, 1.0)]
    with pytest.raises(ConfigError, match="line 2"):
        parse_grid("1 1\n1\n")
    with pytest.raises(ConfigError):
        parse_grid("# nothing\n")
    with pytest.raises(ConfigError, match="positive"):
        parse_grid(f"1 {-math.pi}\n")
