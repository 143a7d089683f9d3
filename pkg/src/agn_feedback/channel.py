"""Channel parameters, power budgets, input strategies and regime labels.

The channel is ``Y_t = X_t + V_t`` with AR(1) noise ``V_t = c V_{t-1} + W_t``,
``W_t ~ N(0, k_w)``.  A time-invariant input strategy is the pair
``(lam, k_z)``: the gain applied to the noise-estimation error and the
variance of the fresh Gaussian innovation added to the input.

Rates are computed in nats everywhere inside the package; use
:func:`to_bits` at presentation time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import NegativePower, NonFiniteInput, NonPositiveNoiseVariance

LN2 = math.log(2.0)


@dataclass(frozen=True)
class ChannelParams:
    c: float
    k_w: float = 1.0


@dataclass(frozen=True)
class PowerBudget:
    kappa: float


@dataclass(frozen=True)
class Strategy:
    lam: float
    k_z: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.k_z)):
            raise NonFiniteInput(f"non-finite strategy {self!r}")
        if self.k_z < 0:
            raise NegativePower(f"innovations variance k_z={self.k_z} < 0")


class Regime(enum.Enum):
    FEEDBACK_GAIN = "FeedbackGain"
    UNSTABLE_LOW_POWER = "UnstableLowPower"
    MARGINALLY_STABLE = "MarginallyStable"

    def __str__(self):
        return self.value


def validate(params: ChannelParams, budget: PowerBudget | None = None) -> None:
    """Raise if the channel parameters or power budget are unusable."""
    values = [params.c, params.k_w]
    if budget is not None:
        values.append(budget.kappa)
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteInput(f"non-finite input in {params!r}, {budget!r}")
    if params.k_w <= 0:
        raise NonPositiveNoiseVariance(f"k_w={params.k_w} must be > 0")
    if budget is not None and budget.kappa < 0:
        raise NegativePower(f"kappa={budget.kappa} must be >= 0")


def regime_threshold(params: ChannelParams) -> float:
    """Smallest power above which feedback pays off; ``inf`` when c**2 <= 1."""
    a = params.c * params.c - 1.0
    if a <= 0:
        return math.inf
    return params.k_w / (a * a)


def classify_regime(params: ChannelParams, budget: PowerBudget) -> Regime:
    validate(params, budget)
    if params.c * params.c <= 1.0:
        return Regime.MARGINALLY_STABLE
    # the threshold itself belongs to the low-power regime
    if budget.kappa > regime_threshold(params):
        return Regime.FEEDBACK_GAIN
    return Regime.UNSTABLE_LOW_POWER


def to_bits(nats: float) -> float:
    return nats / LN2


def to_base(nats: float, base: str) -> float:
    if base == "bits":
        return nats / LN2
    if base == "nats":
        return nats
    raise ValueError(f"unknown base {base!r}")
