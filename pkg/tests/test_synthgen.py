import math

import numpy as np
import pytest

from fairprice.metrics import hgr_kde
from fairprice.synthgen import SynthConfig, generate, generate_full, write


def _freq_ratio(p):
    c, e, s = p["claim_nb"], p["expo"], p.s
    return (c[s == 1].sum() / e[s == 1].sum()) / (c[s == 0].sum() / e[s == 0].sum())


def test_columns_and_roles():
    p = generate(SynthConfig(n=100, seed=1))
    assert p.names == ["driv_age", "veh_power", "zone", "driv_2", "expo", "s", "claim_nb", "claim_amount", "y"]
    assert p.sensitive == "s" and p.target == "y"
    assert np.all(p.exposure > 0) and np.all(p.exposure <= 1)
    assert np.array_equal(p.y, p["claim_amount"])
    assert np.all((p["claim_nb"] > 0) == (p.y > 0))


def test_null_hgr_of_y():
    p = generate(SynthConfig(n=50_000, seed=0))
    assert hgr_kde(p.s, p.y) < 0.05


@pytest.mark.parametrize("seed", range(5))
def test_direct_effect_rate_ratio(seed):
    # at the default 4% base rate the ratio's sampling sd is about 6%, so a
    # busier book is used to make the 5% band meaningful
    p = generate(SynthConfig(n=50_000, seed=seed, gamma_direct=0.5, freq_base=0.3))
    assert _freq_ratio(p) == pytest.approx(math.exp(0.5), rel=0.05)


def test_true_rates_carry_the_direct_effect():
    sp = generate_full(SynthConfig(n=5_000, seed=4, gamma_direct=0.5))
    p = sp.portfolio
    # rows equal on everything but s differ by exactly exp(gamma)
    base = SynthConfig(n=5_000, seed=4, gamma_direct=0.0)
    r0 = generate_full(base).rate
    ratio = sp.rate / r0
    assert np.allclose(ratio[p.s == 1], math.exp(0.5))
    assert np.allclose(ratio[p.s == 0], 1.0)


def test_indirect_channel_moves_power_only():
    p = generate(SynthConfig(n=20_000, seed=2, rho_indirect=0.6))
    s = p.s.astype(float)
    assert np.corrcoef(s, np.log(p["veh_power"]))[0, 1] > 0.5
    assert abs(np.corrcoef(s, p["driv_age"])[0, 1]) < 0.03


def test_same_seed_same_bytes(tmp_path):
    cfg = SynthConfig(n=500, seed=9, rho_indirect=0.3)
    a = write(generate_full(cfg), tmp_path / "a.csv")
    b = write(generate_full(cfg), tmp_path / "b.csv")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_share_of_s1_within_three_sigma(seed):
    cfg = SynthConfig(n=40_000, seed=seed)
    p = generate(cfg)
    sd = math.sqrt(cfg.p_male * (1 - cfg.p_male) / cfg.n)
    assert abs(p.s.mean() - cfg.p_male) < 3 * sd


@pytest.mark.parametrize("field,value", [("p_male", 1.5), ("p_male", 0.0), ("rho_indirect", -0.1),
                                         ("freq_base", 0.0), ("sev_shape", -1.0)])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ValueError, match=field):
        SynthConfig(**{field: value}).validate()


def test_unknown_field():
    with pytest.raises(ValueError, match="unknown"):
        SynthConfig.from_dict({"n": 10, "bogus": 1})
