"""Monte Carlo simulation of the channel under a time-invariant strategy.

Gaussian draws come from a Philox counter-based generator: the key is the
seed and the counter encodes (trajectory pair, time step), so the draw for
any (trajectory, time) is fixed regardless of how trajectories are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .channel import ChannelParams, Strategy, validate
from .errors import OutOfScope
from .riccati import are_roots, dre_trajectory, kalman_gain_and_map, structural_tests


@dataclass(frozen=True)
class SimulationConfig:
    params: ChannelParams
    strategy: Strategy
    n: int
    m: int
    seed: int = 0
    v0: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.m < 2:
            raise ValueError(f"need n >= 1 and m >= 2, got n={self.n}, m={self.m}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


@dataclass
class SimulationReport:
    empirical_power: float
    empirical_innovation_variance: np.ndarray
    empirical_mse: np.ndarray
    empirical_rate: float
    analytic_power: float
    analytic_innovation_variance: np.ndarray
    analytic_mse: np.ndarray
    analytic_rate: float
    power_stderr: float
    lag1_correlation: np.ndarray
    m: int = 0
    deviations: dict = field(default_factory=dict)

    @property
    def innovation_stderr(self) -> np.ndarray:
        return self.analytic_innovation_variance * math.sqrt(2.0 / (self.m - 1))

    @property
    def mse_stderr(self) -> np.ndarray:
        return self.analytic_mse * math.sqrt(2.0 / (self.m - 1))


def standard_normals(seed: int, t: int, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Standard normal pairs ``(w, z)`` for trajectories ``start .. start+count-1`` at step ``t``.

    Each counter value yields four 64-bit words, i.e. two trajectories.
    """
    first_pair = start // 2
    skip = start - 2 * first_pair
    total = skip + count
    bg = np.random.Philox(key=seed, counter=[first_pair, t, 0, 0])
    raw = bg.random_raw(2 * total)[2 * skip:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    normals = ndtri(u)
    return normals[0::2], normals[1::2]


def simulate(config: SimulationConfig) -> SimulationReport:
    params, strategy = config.params, config.strategy
    validate(params)
    c, kw = params.c, params.k_w
    lam, kz = strategy.lam, strategy.k_z
    n, m = config.n, config.m

    ks = dre_trajectory(params, strategy, n)
    # error coordinates e_t = V_t - Vhat_t; V_t itself grows like c**t for
    # unstable noise and the difference would drown in rounding.  Vhat_0 = v0
    # makes e_0 = 0 whatever v0 is.
    err = np.zeros(m)
    x_energy = np.zeros(m)
    var_i = np.empty(n)
    mse = np.empty(n)
    lag1 = np.empty(max(n - 1, 0))
    i_prev = None
    sw, sz = math.sqrt(kw), math.sqrt(kz)
    for t in range(n):
        w_std, z_std = standard_normals(config.seed, t, 0, m)
        gain, _ = kalman_gain_and_map(params, strategy, ks[t])
        w = sw * w_std
        x = lam * err + sz * z_std
        # Y_t - c Vhat_{t-1} = X_t + c e_{t-1} + W_t
        innov = x + c * err + w
        err = c * err + w - gain * innov
        x_energy += x * x
        var_i[t] = np.var(innov, ddof=1)
        mse[t] = np.var(err, ddof=1)
        if i_prev is not None:
            lag1[t - 1] = np.corrcoef(innov, i_prev)[0, 1]
        i_prev = innov

    per_traj_power = x_energy / n
    emp_power = float(np.mean(per_traj_power))
    an_var_i = np.array([(lam + c) ** 2 * ks[t] + kz + kw for t in range(n)])
    an_power = float(np.mean([lam * lam * ks[t] + kz for t in range(n)]))
    emp_rate = 0.5 * float(np.mean(np.log(var_i / kw)))
    an_rate = 0.5 * float(np.mean(np.log(an_var_i / kw)))
    an_mse = np.array(ks[1:])
    report = SimulationReport(
        empirical_power=emp_power,
        empirical_innovation_variance=var_i,
        empirical_mse=mse,
        empirical_rate=emp_rate,
        analytic_power=an_power,
        analytic_innovation_variance=an_var_i,
        analytic_mse=an_mse,
        analytic_rate=an_rate,
        power_stderr=float(np.std(per_traj_power, ddof=1) / math.sqrt(m)),
        lag1_correlation=lag1,
        m=m,
    )
    report.deviations = {
        "power": emp_power - an_power,
        "rate": emp_rate - an_rate,
        "innovation_variance_max_z": float(np.max(np.abs(var_i - an_var_i) / report.innovation_stderr)),
        "mse_max_z": _max_z(mse, an_mse, report.mse_stderr),
        "lag1_correlation_max": float(np.max(np.abs(lag1))) if lag1.size else 0.0,
    }
    return report


def _max_z(emp, an, se):
    mask = se > 0
    if not np.any(mask):
        return float(np.max(np.abs(emp - an)))
    return float(np.max(np.abs(emp[mask] - an[mask]) / se[mask]))


@dataclass
class CounterexampleReport:
    error_variances: list
    closed_loop: list
    rate: float
    power: float
    stabilizable: bool
    are_roots: tuple
    positive_root: float | None
    positive_root_rate: float | None


def counterexample_kz_zero(params: ChannelParams, lam: float, n: int) -> CounterexampleReport:
    """Run the Riccati recursion with zero input innovations from ``K_0 = 0``.

    Every ``K_t`` stays at zero, the error map is ``-lam`` and both rate and
    power vanish.  When ``|lam| > 1`` the ARE also has the positive root
    ``k_w (lam^2 - 1) / (lam + c)^2`` with rate ``ln|lam|``, which the
    recursion never reaches.
    """
    validate(params)
    if abs(params.c) >= 1.0:
        raise OutOfScope(f"stable noise required, got c={params.c}")
    strategy = Strategy(lam, 0.0)
    ks = dre_trajectory(params, strategy, n)
    loops = [kalman_gain_and_map(params, strategy, k)[1] for k in ks[:-1]]
    c, kw = params.c, params.k_w
    rate = sum(0.5 * math.log(((lam + c) ** 2 * k + kw) / kw) for k in ks[:-1]) / n
    power = sum(lam * lam * k for k in ks[:-1]) / n
    roots = are_roots(params, strategy)
    positive = [r for r in roots if r > 0]
    pos = positive[0] if positive else None
    return CounterexampleReport(
        error_variances=ks, closed_loop=loops, rate=rate, power=power,
        stabilizable=structural_tests(params, strategy).stabilizable, are_roots=roots,
        positive_root=pos,
        positive_root_rate=math.log(abs(lam)) if pos is not None else None)
