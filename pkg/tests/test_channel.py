import math

import pytest
from hypothesis import given, strategies as st

from agn_feedback.channel import (ChannelParams, PowerBudget, Regime, Strategy, classify_regime,
                                  regime_threshold, to_base, to_bits, validate)
from agn_feedback.errors import NegativePower, NonFiniteInput, NonPositiveNoiseVariance


@pytest.mark.parametrize("params, budget, exc", [
    (ChannelParams(2.0, 0.0), PowerBudget(1.0), NonPositiveNoiseVariance),
    (ChannelParams(2.0, -1.0), PowerBudget(1.0), NonPositiveNoiseVariance),
    (ChannelParams(2.0, 1.0), PowerBudget(-0.1), NegativePower),
    (ChannelParams(math.nan, 1.0), PowerBudget(1.0), NonFiniteInput),
    (ChannelParams(2.0, 1.0), PowerBudget(math.inf), NonFiniteInput),
])
def test_validate_rejects(params, budget, exc):
    with pytest.raises(exc):
        validate(params, budget)


def test_validation_errors_are_value_errors():
    with pytest.raises(ValueError):
        validate(ChannelParams(1.0, 0.0))


def test_strategy_rejects_bad_values():
    with pytest.raises(NegativePower):
        Strategy(0.5, -1.0)
    with pytest.raises(NonFiniteInput):
        Strategy(math.inf, 1.0)


@pytest.mark.parametrize("c, kw, expected", [(2.0, 1.0, 1 / 9), (1.5, 1.0, 1 / 1.5625), (3.0, 2.0, 2 / 64)])
def test_threshold(c, kw, expected):
    assert regime_threshold(ChannelParams(c, kw)) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("c", [0.0, 0.5, -1.0, 1.0])
def test_threshold_infinite_for_non_expanding_noise(c):
    assert math.isinf(regime_threshold(ChannelParams(c, 1.0)))


@pytest.mark.parametrize("c, kappa, regime", [
    (2.0, 1.0, Regime.FEEDBACK_GAIN),
    (2.0, 1 / 9, Regime.UNSTABLE_LOW_POWER),  # boundary goes to the low-power side
    (2.0, 0.05, Regime.UNSTABLE_LOW_POWER),
    (-2.0, 1.0, Regime.FEEDBACK_GAIN),
    (0.75, 100.0, Regime.MARGINALLY_STABLE),
    (1.0, 100.0, Regime.MARGINALLY_STABLE),
    (-1.0, 0.0, Regime.MARGINALLY_STABLE),
])
def test_classify_regime(c, kappa, regime):
    assert classify_regime(ChannelParams(c, 1.0), PowerBudget(kappa)) is regime


def test_regime_names():
    assert str(Regime.FEEDBACK_GAIN) == "FeedbackGain"
    assert str(Regime.UNSTABLE_LOW_POWER) == "UnstableLowPower"
    assert str(Regime.MARGINALLY_STABLE) == "MarginallyStable"


@given(c=st.floats(-5, 5), kw=st.floats(0.01, 10),
       kappas=st.lists(st.floats(0, 1e3), min_size=2, max_size=30))
def test_regime_flips_at_most_once_along_power(c, kw, kappas):
    params = ChannelParams(c, kw)
    seq = [classify_regime(params, PowerBudget(k)) for k in sorted(kappas)]
    flips = sum(a is not b for a, b in zip(seq, seq[1:]))
    assert flips <= 1
    if flips:
        assert seq[0] is Regime.UNSTABLE_LOW_POWER and seq[-1] is Regime.FEEDBACK_GAIN


def test_units():
    assert to_bits(math.log(2.0)) == pytest.approx(1.0, rel=1e-15)
    assert to_base(1.0, "nats") == 1.0
    with pytest.raises(ValueError):
        to_base(1.0, "decibans")
