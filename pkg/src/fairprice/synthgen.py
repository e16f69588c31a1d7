"""Synthetic motor portfolios with tunable direct and indirect S effects.

Claim frequency follows a log-linear Poisson model in which S can act
directly (``gamma_direct``) and through ``veh_power``, whose latent driver
is correlated with S at level ``rho_indirect``. Severities are Gamma.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import ColumnSpec, Portfolio, write_csv

ZONES = ("Z1", "Z2", "Z3", "Z4", "Z5")
ZONE_PROBS = (0.30, 0.25, 0.20, 0.15, 0.10)
ZONE_EFFECT = (0.0, 0.10, 0.20, 0.30, 0.40)

SCHEMA = (
    ColumnSpec("driv_age", "quantitative", "feature"),
    ColumnSpec("veh_power", "quantitative", "feature"),
    ColumnSpec("zone", "categorical", "feature"),
    ColumnSpec("driv_2", "binary", "feature"),
    ColumnSpec("expo", "quantitative", "exposure"),
    ColumnSpec("s", "binary", "sensitive"),
    ColumnSpec("claim_nb", "quantitative", "claim_count"),
    ColumnSpec("claim_amount", "quantitative", "identifier"),
    ColumnSpec("y", "quantitative", "target"),
)
FEATURES = ("driv_age", "veh_power", "zone", "driv_2")


@dataclass(frozen=True)
class SynthConfig:
    n: int = 10_000
    p_male: float = 0.584
    gamma_direct: float = 0.0
    rho_indirect: float = 0.0
    freq_base: float = 0.04
    sev_shape: float = 4.0
    sev_mean_base: float = 580.0
    seed: int = 0
    # frequency slope on the standardised power driver
    power_effect: float = 0.5

    def validate(self) -> "SynthConfig":
        checks = {
            "n": self.n >= 1,
            "p_male": 0 < self.p_male < 1,
            "rho_indirect": 0 <= self.rho_indirect <= 1,
            "freq_base": self.freq_base > 0,
            "sev_shape": self.sev_shape > 0,
            "sev_mean_base": self.sev_mean_base > 0,
        }
        for name, ok in checks.items():
            if not ok:
                raise ValueError(f"invalid SynthConfig.{name} = {getattr(self, name)!r}")
        return self

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthPortfolio:
    portfolio: Portfolio
    rate: np.ndarray  # true annual claim rate per row
    expected_loss: np.ndarray  # expo * rate * mean severity


def generate_full(cfg: SynthConfig) -> SynthPortfolio:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    s = (rng.random(n) < cfg.p_male).astype(np.int64)
    age = np.clip(np.round(rng.normal(47.0, 14.0, n)), 18, 77)
    s_std = (s - cfg.p_male) / math.sqrt(cfg.p_male * (1 - cfg.p_male))
    z = cfg.rho_indirect * s_std + math.sqrt(1 - cfg.rho_indirect ** 2) * rng.standard_normal(n)
    power = np.round(94.0 * np.exp(0.3 * z), 1)
    zone_idx = rng.choice(len(ZONES), size=n, p=ZONE_PROBS)
    zone = np.array(ZONES)[zone_idx]
    driv_2 = (rng.random(n) < 0.31).astype(np.int64)
    expo = np.clip(rng.beta(5.0, 2.0, n), 0.0034, 1.0)

    log_rate = (math.log(cfg.freq_base) - 0.015 * (age - 47.0) + cfg.power_effect * z
                + np.asarray(ZONE_EFFECT)[zone_idx] + 0.1 * driv_2 + cfg.gamma_direct * s)
    rate = np.exp(log_rate)
    claim_nb = rng.poisson(expo * rate)
    amount = np.zeros(n)
    hit = claim_nb > 0
    scale = cfg.sev_mean_base / cfg.sev_shape
    amount[hit] = np.round(rng.gamma(cfg.sev_shape * claim_nb[hit], scale), 2)

    cols = {
        "driv_age": age, "veh_power": power, "zone": zone, "driv_2": driv_2, "expo": expo,
        "s": s, "claim_nb": claim_nb.astype(float), "claim_amount": amount, "y": amount.copy(),
    }
    p = Portfolio(SCHEMA, cols, provenance=f"synthgen seed={cfg.seed}",
                  levels={"zone": ZONES})
    return SynthPortfolio(p, rate, expo * rate * cfg.sev_mean_base)


def generate(cfg: SynthConfig) -> Portfolio:
    return generate_full(cfg).portfolio


def write(sp: SynthPortfolio, path) -> tuple[Path, Path]:
    """Write the portfolio CSV and a ``<stem>_truth.csv`` sidecar of true rates."""
    path = Path(path)
    main = write_csv(sp.portfolio, path)
    truth = path.with_name(path.stem + "_truth.csv")
    with truth.open("w", encoding="utf-8") as fh:
        fh.write("row,rate,expected_loss\n")
        for i, (r, e) in enumerate(zip(sp.rate, sp.expected_loss)):
            fh.write(f"{i},{float(r)!r},{float(e)!r}\n")
    return main, truth
