"""Synthetic censored cohorts with categorical attributes.

Each row gets a latent risk score from the levels of its informative
attributes.  Survival in days is a geometric draw whose mean shrinks with
risk; a random subset of rows is censored at a uniform time before death
(those rows are ``alive``).  Attribute cells are masked completely at
random.  Everything needed to recompute the Bayes-optimal label for any
survival threshold is returned in a sidecar dictionary.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .data import DAYS_PER_YEAR, AttributeColumn, ClinicalTable
from .exceptions import InvalidSpec

N_LEVELS = 4
SEPARATION = {"low": 0.5, "medium": 1.0, "high": 2.0}
_LEVEL_EFFECTS = np.array([-1.5, -0.5, 0.5, 1.5])


@dataclass(frozen=True)
class SyntheticSpec:
    n_rows: int = 500
    n_informative: int = 6
    n_noise: int = 4
    separation: str | float = "medium"
    censoring_rate: float = 0.5
    missing_rate: float = 0.0
    label_noise: float = 0.0
    correlation: float = 0.5
    base_survival_years: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 1:
            raise InvalidSpec("n_rows must be positive")
        if self.n_informative < 1 or self.n_noise < 0:
            raise InvalidSpec("need at least one informative attribute")
        if isinstance(self.separation, str) and self.separation not in SEPARATION:
            raise InvalidSpec(f"separation must be one of {sorted(SEPARATION)} or a number")
        if not isinstance(self.separation, str) and not self.separation > 0:
            raise InvalidSpec("separation must be positive")
        if not 0 <= self.censoring_rate < 1:
            raise InvalidSpec("censoring_rate must lie in [0, 1)")
        if not 0 <= self.missing_rate < 1:
            raise InvalidSpec("missing_rate must lie in [0, 1)")
        if not 0 <= self.label_noise < 0.5:
            raise InvalidSpec("label_noise must lie in [0, 0.5)")
        if not 0 <= self.correlation < 1:
            raise InvalidSpec("correlation must lie in [0, 1)")
        if not self.base_survival_years > 0:
            raise InvalidSpec("base_survival_years must be positive")

    @property
    def strength(self) -> float:
        if isinstance(self.separation, str):
            return SEPARATION[self.separation]
        return float(self.separation)


def _draw_levels(rng, n, n_informative, n_noise, correlation):
    """Level codes; informative attributes share one latent factor."""
    cuts = norm.ppf(np.arange(1, N_LEVELS) / N_LEVELS)
    z = rng.standard_normal(n)
    cols = []
    for j in range(n_informative + n_noise):
        c = correlation if j < n_informative else 0.0
        v = c * z + math.sqrt(1 - c * c) * rng.standard_normal(n)
        cols.append(np.searchsorted(cuts, v))
    return np.column_stack(cols).astype(np.int64)


def _risk_model(rng, n_informative):
    weights = rng.uniform(0.5, 1.5, n_informative)
    effects = np.array([rng.permutation(_LEVEL_EFFECTS) for _ in range(n_informative)])
    return weights, effects


def _raw_risk(levels, weights, effects):
    k = len(weights)
    return sum(weights[j] * effects[j][levels[:, j]] for j in range(k))


def _mask(rng, levels, rate):
    if rate <= 0:
        return levels
    out = levels.copy()
    out[rng.random(levels.shape) < rate] = -1
    return out


def attribute_names(n_informative: int, n_noise: int) -> list:
    return [f"x{j + 1:02d}" for j in range(n_informative + n_noise)]


def generate_synthetic(spec: SyntheticSpec) -> tuple:
    """Return ``(table, sidecar)`` for ``spec``; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    levels = _draw_levels(rng, n, spec.n_informative, spec.n_noise, spec.correlation)
    weights, effects = _risk_model(rng, spec.n_informative)
    raw = _raw_risk(levels, weights, effects)
    center, scale = float(raw.mean()), float(raw.std()) or 1.0
    risk = (raw - center) / scale
    flipped = rng.random(n) < spec.label_noise
    effective = np.where(flipped, -risk, risk)

    base_days = spec.base_survival_years * DAYS_PER_YEAR
    mean_days = base_days * np.exp(-spec.strength * effective)
    days = rng.geometric(np.minimum(1.0, 1.0 / mean_days))
    censored = rng.random(n) < spec.censoring_rate
    follow_up = np.floor(rng.random(n) * days).astype(np.int64)
    survival_days = np.where(censored, follow_up, days)
    vital = np.where(censored, "alive", "dead")

    observed = _mask(rng, levels, spec.missing_rate)
    names = attribute_names(spec.n_informative, spec.n_noise)
    level_names = tuple(f"L{i}" for i in range(N_LEVELS))
    attributes = tuple(
        AttributeColumn(name, "categorical",
                        tuple(None if c < 0 else level_names[c] for c in observed[:, j]),
                        level_names)
        for j, name in enumerate(names))
    table = ClinicalTable(attributes, tuple(str(v) for v in vital),
                          tuple(int(d) for d in survival_days),
                          tuple(f"P{i:05d}" for i in range(n)))
    sidecar = {
        "spec": asdict(spec),
        "survival_model": "geometric days, mean = base_days * exp(-strength * risk)",
        "base_days": base_days,
        "strength": spec.strength,
        "attributes": names,
        "informative": names[: spec.n_informative],
        "risk_weights": weights.tolist(),
        "level_effects": effects.tolist(),
        "risk_center": center,
        "risk_scale": scale,
        "rows": {
            "risk": risk.tolist(),
            "label_flipped": flipped.tolist(),
            "mean_days": mean_days.tolist(),
            "true_days": days.tolist(),
            "censored": censored.tolist(),
        },
    }
    return table, sidecar


def bayes_labels(sidecar: dict, T: float) -> np.ndarray:
    """Most likely label at threshold ``T`` years given the generating risk."""
    mean_days = np.asarray(sidecar["rows"]["mean_days"])
    p = np.minimum(1.0, 1.0 / mean_days)
    t_days = math.ceil(T * DAYS_PER_YEAR)
    # P(days >= t_days) for a geometric draw starting at 1
    survive = (1 - p) ** (t_days - 1)
    return np.where(survive >= 0.5, 1, -1)


def make_classification(n: int, n_informative: int = 6, n_noise: int = 4,
                        missing_rate: float = 0.0, label_noise: float = 0.0,
                        correlation: float = 0.5, seed: int = 0) -> tuple:
    """Level-coded binary task labeled by the sign of the latent risk.

    Returns ``(X, y, y_clean)``: ``y`` carries ``label_noise`` flips,
    ``y_clean`` does not.  The clean labels are a deterministic function of
    the (unmasked) attributes, so the task is separable.
    """
    rng = np.random.default_rng(seed)
    levels = _draw_levels(rng, n, n_informative, n_noise, correlation)
    weights, effects = _risk_model(rng, n_informative)
    raw = _raw_risk(levels, weights, effects)
    y_clean = np.where(raw >= np.median(raw), 1, -1)
    flips = rng.random(n) < label_noise
    y = np.where(flips, -y_clean, y_clean)
    return _mask(rng, levels, missing_rate), y, y_clean
