"""Finite-horizon feedback rates with time-varying strategies.

Over ``n`` channel uses the per-step rate is

    (1/n) sum_t 0.5 ln(((lam_t + c_t)^2 K_{t-1} + k_z_t + k_w_t) / k_w_t)

where ``K_t`` follows the time-varying feedback Riccati recursion from
``K_0 = 0`` and the average power ``(1/n) sum_t (lam_t^2 K_{t-1} + k_z_t)``
may not exceed the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .capacity import feedback_capacity
from .channel import ChannelParams, PowerBudget, Regime, validate
from .errors import OptimizerFailed


@dataclass(frozen=True)
class TimeVaryingStrategy:
    lams: tuple
    k_zs: tuple
    error_variances: tuple  # K_0 .. K_n
    power: float

    @property
    def horizon(self) -> int:
        return len(self.lams)


@dataclass
class OptimizerConfig:
    starts: int = 8
    seed: int = 0
    maxiter: int = 300


def _schedules(params, n, c_schedule, kw_schedule):
    cs = np.full(n, params.c) if c_schedule is None else np.asarray(c_schedule, dtype=float)
    kws = np.full(n, params.k_w) if kw_schedule is None else np.asarray(kw_schedule, dtype=float)
    if cs.shape != (n,) or kws.shape != (n,):
        raise ValueError("schedules must have one entry per channel use")
    if np.any(kws <= 0):
        raise ValueError("noise variances must be positive")
    return cs, kws


def evaluate_schedule(lams, k_zs, cs, kws):
    """Return ``(rate_per_step, average_power, K_0..K_n)`` for a schedule."""
    n = len(lams)
    ks = np.empty(n + 1)
    ks[0] = 0.0
    total_rate = 0.0
    total_power = 0.0
    for t in range(n):
        lam, kz, c, kw, k = lams[t], k_zs[t], cs[t], kws[t], ks[t]
        denom = kz + kw + (lam + c) ** 2 * k
        total_rate += 0.5 * math.log(denom / kw)
        total_power += lam * lam * k + kz
        ks[t + 1] = (k * (c * c * kz + kw * lam * lam) + kw * kz) / denom
    return total_rate / n, total_power / n, ks


def _project(lams, k_zs, cs, kws, kappa):
    """Scale the innovation variances into the budget, then spend any slack.

    Leftover power goes to the last step, whose variance does not feed any
    later Riccati value, so the rate can only increase.
    """
    n = len(lams)
    k_zs = np.maximum(np.asarray(k_zs, dtype=float), 0.0)
    _, power, _ = evaluate_schedule(lams, k_zs, cs, kws)
    if power > kappa:
        # zero innovations give zero error variance and zero power
        lo, hi = 0.0, 1.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if evaluate_schedule(lams, mid * k_zs, cs, kws)[1] <= kappa:
                lo = mid
            else:
                hi = mid
        k_zs = lo * k_zs
    _, _, ks = evaluate_schedule(lams, k_zs, cs, kws)
    used = sum(lams[t] ** 2 * ks[t] + k_zs[t] for t in range(n - 1))
    k_zs = k_zs.copy()
    k_zs[-1] = max(k_zs[-1], n * kappa - used - lams[-1] ** 2 * ks[n - 1])
    return k_zs


def finite_horizon_optimize(params: ChannelParams, budget: PowerBudget, n: int,
                            config: OptimizerConfig | None = None, c_schedule=None,
                            kw_schedule=None) -> tuple[TimeVaryingStrategy, float]:
    """Maximize the n-step feedback rate over time-varying strategies.

    Seeds are the time-invariant optimum (when feedback helps), the IID
    input and quasi-random points; each is refined by SLSQP, projected back
    into the power budget and the best feasible schedule is kept.

    Returns
    -------
    (TimeVaryingStrategy, float)
        The schedule and its per-step rate in nats.
    """
    validate(params, budget)
    if n < 1:
        raise ValueError(f"horizon n={n} must be >= 1")
    config = config or OptimizerConfig()
    kappa = budget.kappa
    cs, kws = _schedules(params, n, c_schedule, kw_schedule)

    seeds = [np.concatenate([np.zeros(n), np.full(n, kappa)])]
    fb = feedback_capacity(params, budget)
    if fb.regime is Regime.FEEDBACK_GAIN and fb.strategy is not None:
        seeds.insert(0, np.concatenate([np.full(n, fb.strategy.lam), np.full(n, fb.strategy.k_z)]))
    if config.starts > 0:
        lam_span = 2.0 * abs(params.c) + 1.0
        sobol = qmc.Sobol(2 * n, scramble=True, seed=config.seed)
        # Sobol balance needs a power-of-two draw
        pts = sobol.random_base2(max(0, math.ceil(math.log2(config.starts))))[:config.starts]
        for p in pts:
            seeds.append(np.concatenate([lam_span * (2.0 * p[:n] - 1.0), 2.0 * kappa * p[n:]]))

    scale = kappa + float(np.mean(kws))

    def neg_rate(x):
        return -evaluate_schedule(x[:n], x[n:], cs, kws)[0]

    def slack(x):
        return (kappa - evaluate_schedule(x[:n], x[n:], cs, kws)[1]) / scale

    best = None
    for x0 in seeds:
        lams0 = x0[:n]
        x0 = np.concatenate([lams0, _project(lams0, x0[n:], cs, kws, kappa)])
        candidates = [x0]
        if kappa > 0:
            res = optimize.minimize(
                neg_rate, x0, method="SLSQP", bounds=[(None, None)] * n + [(0.0, None)] * n,
                constraints=[{"type": "ineq", "fun": slack}],
                options={"maxiter": config.maxiter, "ftol": 1e-12})
            if np.all(np.isfinite(res.x)):
                candidates.append(res.x)
        for x in candidates:
            lams = np.asarray(x[:n], dtype=float)
            k_zs = _project(lams, x[n:], cs, kws, kappa)
            rate, power, ks = evaluate_schedule(lams, k_zs, cs, kws)
            if power > kappa * (1.0 + 1e-12) + 1e-15 or not math.isfinite(rate):
                continue
            if best is None or rate > best[0]:
                best = (rate, lams, k_zs, ks, power)
    if best is None:
        raise OptimizerFailed("no feasible schedule found")
    rate, lams, k_zs, ks, power = best
    strat = TimeVaryingStrategy(tuple(float(v) for v in lams), tuple(float(v) for v in k_zs),
                                tuple(float(v) for v in ks), float(power))
    return strat, float(rate)
