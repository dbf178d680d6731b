"""Synthetic crowdsourced-style throughput records with a known per-row
predictive distribution.

The latent target lives in a standardised-log space: ``y ~ N(mu(x), sigma(x)^2)``
and ``kbps = expm1(REF_SCALE * y + REF_LOC[tech])``. ``mu`` and ``sigma`` are
fixed functions of the (rounded, observed) features. Every constant lives in
:data:`PROFILES` / :data:`FEATURE_LAWS`; a golden-hash test pins the stream.

Profiles
--------
``"tech"``            per-technology mean and noise laws (default)
``"homoscedastic"``   NR_SA mean law, constant sigma
``"heteroscedastic"`` NR_SA mean law, sigma driven by jitter alone
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .data import DEFAULT_SCHEMA, TECHS, WEEK_SECONDS, Dataset, TargetTransform, derive_context_array, ingest_csv
from .exceptions import ConfigError, DataError
from .prob import NormalParams, nll

START_EPOCH = 1_746_403_200  # 2025-05-05T00:00:00Z, a Monday
REF_SCALE = 1.1

FEATURE_LAWS = MappingProxyType(
    {
        "rsrp": dict(mean=-95.0, sd=12.0, lo=-140.0, hi=-44.0, step=1.0),
        "rsrq": dict(mean=-11.0, sd=3.0, lo=-20.0, hi=-3.0, step=0.5),
        "sinr": dict(mean=12.0, sd=8.0, lo=-10.0, hi=30.0, step=1.0, rsrp_corr=0.5),
        "timing_advance": dict(p=0.15),
        "latency_ms": dict(median=30.0, log_sd=0.5, step=1.0),
        "jitter_ms": dict(median=5.0, log_sd=0.7, step=0.1),
        "ttfb_ms": dict(lo=1.5, hi=4.0, step=1.0),
        "packet_loss": dict(mean=0.005, step=1e-4),
        "carrier": dict(codes=("A", "B", "C"), probs=(0.45, 0.35, 0.20), effect=(0.0, 0.12, -0.15)),
    }
)


@dataclass(frozen=True)
class TechProfile:
    ref_loc: float
    bands: tuple[str, ...]
    band_probs: tuple[float, ...]
    band_effect: tuple[float, ...]
    intercept: float
    w_radio: float
    w_e2e: float
    load_mean: float
    interaction: float
    sigma0: float
    sigma_jitter: float
    sigma_load: float
    sigma_rsrp: float


PROFILES = MappingProxyType(
    {
        "LTE": TechProfile(
            ref_loc=math.log(25_000.0),
            bands=("B3", "B7", "B20", "B1"),
            band_probs=(0.40, 0.25, 0.25, 0.10),
            band_effect=(0.0, 0.15, -0.30, 0.05),
            intercept=0.0,
            w_radio=1.0,
            w_e2e=0.6,
            load_mean=0.20,
            interaction=0.15,
            sigma0=0.52,
            sigma_jitter=0.20,
            sigma_load=0.15,
            sigma_rsrp=0.10,
        ),
        "NR_NSA": TechProfile(
            ref_loc=math.log(80_000.0),
            bands=("B3", "B7", "B20", "B1"),
            band_probs=(0.45, 0.25, 0.20, 0.10),
            band_effect=(0.0, 0.08, -0.12, 0.03),
            intercept=0.0,
            w_radio=0.85,
            w_e2e=0.85,
            load_mean=0.12,
            interaction=0.10,
            sigma0=0.60,
            sigma_jitter=0.25,
            sigma_load=0.10,
            sigma_rsrp=0.10,
        ),
        "NR_SA": TechProfile(
            ref_loc=math.log(150_000.0),
            bands=("n78", "n28", "n1"),
            band_probs=(0.55, 0.30, 0.15),
            band_effect=(0.45, -0.40, 0.0),
            intercept=0.0,
            w_radio=0.65,
            w_e2e=1.05,
            load_mean=0.05,
            interaction=0.10,
            sigma0=0.68,
            sigma_jitter=0.30,
            sigma_load=0.05,
            sigma_rsrp=0.12,
        ),
    }
)

HOMOSCEDASTIC_SIGMA = 1.0
HETERO_SIGMA0 = 0.5
HETERO_JITTER_SLOPE = 0.5

DEFAULT_MISSING_RATES = MappingProxyType(
    {
        "rsrq": 0.03,
        "sinr": 0.10,
        "timing_advance": 0.15,
        "jitter_ms": 0.02,
        "packet_loss": 0.05,
        "band": 0.02,
    }
)

PROFILE_NAMES = ("tech", "homoscedastic", "heteroscedastic")
CSV_FEATURES = tuple(c.name for c in DEFAULT_SCHEMA.columns if c.kind in ("numeric", "categorical"))


@dataclass(frozen=True)
class GeneratorConfig:
    tech: str = "NR_SA"
    n_rows: int = 20_000
    seed: int = 0
    span_weeks: int = 16
    missing_rates: dict = field(default_factory=lambda: dict(DEFAULT_MISSING_RATES))
    profile: str = "tech"

    def __post_init__(self):
        if self.tech not in TECHS:
            raise ConfigError(f"tech must be one of {TECHS}")
        if self.n_rows < 1:
            raise ConfigError("n_rows must be >= 1")
        if self.span_weeks < 4:
            raise ConfigError("span_weeks must be >= 4")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.profile not in PROFILE_NAMES:
            raise ConfigError(f"profile must be one of {PROFILE_NAMES}")
        for name, rate in self.missing_rates.items():
            if name not in CSV_FEATURES:
                raise ConfigError(f"missing rate given for unknown column {name!r}")
            if not 0 <= rate <= 1:
                raise ConfigError(f"missing rate for {name} must be in [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    """True latent (mu, sigma) per row, in the generator's standardised space."""

    mu: np.ndarray
    sigma: np.ndarray
    ref_loc: float
    ref_scale: float = REF_SCALE

    def __len__(self):
        return len(self.mu)

    def params(self) -> NormalParams:
        return NormalParams.from_sigma(self.mu, self.sigma)

    def in_space(self, t: TargetTransform) -> NormalParams:
        """The same distributions expressed in the units of a fitted transform."""
        mu = (self.ref_scale * self.mu + self.ref_loc - t.mu_train) / t.sigma_train
        sigma = self.ref_scale * self.sigma / t.sigma_train
        return NormalParams.from_sigma(mu, sigma)

    def subset(self, rows) -> "GroundTruth":
        return GroundTruth(self.mu[rows], self.sigma[rows], self.ref_loc, self.ref_scale)


def _round(x, step):
    # second rounding strips float noise such as 4.1000000000000005
    return np.round(np.round(x / step) * step, 10)


def _latent(cfg: GeneratorConfig, cols: dict, hour: np.ndarray, band_idx, carrier_idx):
    prof = PROFILES[cfg.tech if cfg.profile == "tech" else "NR_SA"]
    law = FEATURE_LAWS
    zr = (cols["rsrp"] - law["rsrp"]["mean"]) / law["rsrp"]["sd"]
    zq = (cols["rsrq"] - law["rsrq"]["mean"]) / law["rsrq"]["sd"]
    zs = (cols["sinr"] - law["sinr"]["mean"]) / law["sinr"]["sd"]
    zta = (cols["timing_advance"] - (1 - law["timing_advance"]["p"]) / law["timing_advance"]["p"]) / 6.0
    zl = np.log(np.maximum(cols["latency_ms"], 0.5) / law["latency_ms"]["median"]) / law["latency_ms"]["log_sd"]
    zj = np.log(np.maximum(cols["jitter_ms"], 0.05) / law["jitter_ms"]["median"]) / law["jitter_ms"]["log_sd"]
    zt = np.log(np.maximum(cols["ttfb_ms"], 1.0) / (law["latency_ms"]["median"] * 2.75)) / 0.55
    zp = np.minimum(cols["packet_loss"] / law["packet_loss"]["mean"] - 1.0, 4.0)
    load = np.cos(2 * np.pi * (hour - 21) / 24)

    radio = 0.45 * np.tanh(zr) + 0.35 * np.tanh(zq) + 0.25 * np.tanh(zs) - 0.10 * np.tanh(zta)
    e2e = -0.40 * np.tanh(zl) - 0.20 * np.tanh(zj) - 0.35 * np.tanh(zt) - 0.15 * np.tanh(zp / 2)
    mu = (
        prof.intercept
        + prof.w_radio * radio
        + prof.w_e2e * e2e
        + np.asarray(prof.band_effect)[band_idx]
        + np.asarray(law["carrier"]["effect"])[carrier_idx]
        - prof.load_mean * load
        + prof.interaction * np.tanh(zr) * np.tanh(zs)
    )
    if cfg.profile == "homoscedastic":
        sigma = np.full_like(mu, HOMOSCEDASTIC_SIGMA)
    elif cfg.profile == "heteroscedastic":
        sigma = HETERO_SIGMA0 * np.exp(HETERO_JITTER_SLOPE * np.clip(zj, -2.5, 2.5))
    else:
        sigma = prof.sigma0 * np.exp(
            prof.sigma_jitter * np.tanh(zj) + prof.sigma_load * load - prof.sigma_rsrp * np.tanh(zr)
        )
    return mu, sigma, prof.ref_loc


def generate_records(cfg: GeneratorConfig) -> tuple[dict, GroundTruth]:
    """Column dict in CSV layout (NaN = missing) plus the ground truth."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_rows
    law = FEATURE_LAWS
    prof = PROFILES[cfg.tech]

    ts = START_EPOCH + np.floor(rng.random(n) * cfg.span_weeks * WEEK_SECONDS)
    hour, _ = derive_context_array(ts)
    carrier_idx = rng.choice(len(law["carrier"]["codes"]), size=n, p=law["carrier"]["probs"])
    band_idx = rng.choice(len(prof.bands), size=n, p=prof.band_probs)

    cols = {}
    e_rsrp = rng.standard_normal(n)
    r = law["rsrp"]
    cols["rsrp"] = _round(np.clip(r["mean"] + r["sd"] * e_rsrp, r["lo"], r["hi"]), r["step"])
    r = law["rsrq"]
    cols["rsrq"] = _round(np.clip(r["mean"] + r["sd"] * rng.standard_normal(n), r["lo"], r["hi"]), r["step"])
    r = law["sinr"]
    mix = r["rsrp_corr"] * e_rsrp + math.sqrt(1 - r["rsrp_corr"] ** 2) * rng.standard_normal(n)
    cols["sinr"] = _round(np.clip(r["mean"] + r["sd"] * mix, r["lo"], r["hi"]), r["step"])
    cols["timing_advance"] = (rng.geometric(law["timing_advance"]["p"], size=n) - 1).astype(float)
    r = law["latency_ms"]
    latency = np.exp(math.log(r["median"]) + r["log_sd"] * rng.standard_normal(n))
    cols["latency_ms"] = _round(latency, r["step"])
    r = law["jitter_ms"]
    cols["jitter_ms"] = _round(np.exp(math.log(r["median"]) + r["log_sd"] * rng.standard_normal(n)), r["step"])
    r = law["ttfb_ms"]
    cols["ttfb_ms"] = _round(latency * rng.uniform(r["lo"], r["hi"], size=n), r["step"])
    r = law["packet_loss"]
    cols["packet_loss"] = np.clip(_round(rng.exponential(r["mean"], size=n), r["step"]), 0.0, 1.0)

    mu, sigma, ref_loc = _latent(cfg, cols, hour, band_idx, carrier_idx)
    y_std = mu + sigma * rng.standard_normal(n)
    kbps = np.maximum(np.expm1(REF_SCALE * y_std + ref_loc), 0.0)

    cols["carrier"] = np.asarray(law["carrier"]["codes"], dtype=object)[carrier_idx]
    cols["band"] = np.asarray(prof.bands, dtype=object)[band_idx]
    # missingness is drawn after the target, so it carries no signal
    for name in CSV_FEATURES:
        rate = cfg.missing_rates.get(name, 0.0)
        drop = rng.random(n) < rate
        if name in ("carrier", "band"):
            cols[name] = np.where(drop, "", cols[name])
        else:
            cols[name] = np.where(drop, np.nan, cols[name])

    cols["timestamp"] = ts
    cols["tech"] = np.full(n, cfg.tech, dtype=object)
    cols["dl_throughput_kbps"] = kbps
    return cols, GroundTruth(mu=mu, sigma=sigma, ref_loc=ref_loc)


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return ""
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def records_to_csv(cols: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = DEFAULT_SCHEMA.names
    w.writerow(names)
    n = len(cols["timestamp"])
    arrays = [cols[name] for name in names]
    for i in range(n):
        w.writerow([_cell(a[i]) for a in arrays])
    return buf.getvalue()


def truth_to_csv(gt: GroundTruth) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_index", "true_mu", "true_sigma"])
    for i, (m, s) in enumerate(zip(gt.mu, gt.sigma)):
        w.writerow([i, repr(float(m)), repr(float(s))])
    return buf.getvalue()


def generate(cfg: GeneratorConfig) -> tuple[Dataset, GroundTruth]:
    """Sample a dataset; identical configs give identical outputs."""
    cols, gt = generate_records(cfg)
    return ingest_csv(io.StringIO(records_to_csv(cols), newline="")), gt


def write_synth(cfg: GeneratorConfig, data_path, truth_path=None) -> GroundTruth:
    cols, gt = generate_records(cfg)
    with open(data_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(records_to_csv(cols))
    if truth_path is not None:
        with open(truth_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(truth_to_csv(gt))
    return gt


def true_nll(gt: GroundTruth, y, transform: TargetTransform | None = None) -> float:
    """Mean NLL of the true distributions.

    ``y`` is in the generator's space, or in ``transform``'s units if given.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] != len(gt):
        raise DataError(f"length mismatch: {y.shape[0]} targets, {len(gt)} truth rows")
    params = gt.params() if transform is None else gt.in_space(transform)
    return float(np.mean(nll(params, y)))


def latent_target(dataset: Dataset, gt: GroundTruth) -> np.ndarray:
    """Recover the generator-space target from a dataset's kbps column."""
    return (np.log1p(dataset.throughput) - gt.ref_loc) / gt.ref_scale


def read_truth(path) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.exists(path):
        raise DataError(f"no such truth file {path}")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, 1], raw[:, 2]
