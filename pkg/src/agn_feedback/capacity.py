"""Feedback capacity, nofeedback lower bounds and related rate formulas.

All rates are in nats per channel use.  Every function validates its
channel/budget pair first and returns a :class:`CapacityResult` whose
``certified`` flag records whether the reported strategy passed the
structural tests, the ARE residual check and the power check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .channel import (ChannelParams, PowerBudget, Regime, Strategy, classify_regime,
                      regime_threshold, validate)
from .errors import (InfeasibleSplit, OptimizerFailed, OutOfScope, OutOfValidityRange,
                     RootFindFailed)
from .riccati import (ARE_TOL, StructuralFlags, are_residual, are_stabilizing_solution,
                      kalman_gain_and_map, nofeedback_are_root, nofeedback_gain_and_map,
                      structural_tests)

POWER_TOL = 1e-9


@dataclass
class CapacityResult:
    rate: float
    regime: Regime
    strategy: Strategy | None = None
    error_variance: float | None = None
    certified: bool = False
    # "capacity", "lower_bound", "kim" or "search"
    kind: str = "capacity"
    flags: StructuralFlags | None = None
    closed_loop: float | None = None
    notes: list = field(default_factory=list)

    @property
    def bits(self) -> float:
        return self.rate / math.log(2.0)


def feedback_objective(params: ChannelParams, strategy: Strategy, k: float) -> float:
    """``0.5 ln(Var(I) / k_w)`` with ``Var(I) = (lam + c)^2 K + k_z + k_w``."""
    var_i = (strategy.lam + params.c) ** 2 * k + strategy.k_z + params.k_w
    return 0.5 * math.log(var_i / params.k_w)


def feedback_power(strategy: Strategy, k: float) -> float:
    return strategy.lam ** 2 * k + strategy.k_z


def _power_ok(power: float, kappa: float, saturate: bool) -> bool:
    scale = max(1.0, kappa)
    if saturate:
        return abs(power - kappa) <= POWER_TOL * scale
    return power <= kappa + POWER_TOL * scale


def certify(params: ChannelParams, budget: PowerBudget, strategy: Strategy, k: float,
            saturate: bool = True) -> tuple[bool, StructuralFlags, float]:
    """Check a feedback strategy and error variance against every requirement.

    Returns ``(ok, flags, closed_loop)``.  ``k`` must be the stabilizing ARE
    root, the structural flags must all hold and the power constraint must
    be met (with equality when ``saturate``).
    """
    sol = are_stabilizing_solution(params, strategy, strict=False)
    flags = sol.flags
    _, f = kalman_gain_and_map(params, strategy, k)
    if sol.stabilizing_root is None:
        return False, flags, f
    same_root = abs(sol.stabilizing_root - k) <= ARE_TOL * (abs(k) + params.k_w)
    ok = (flags.all and same_root and abs(f) < 1.0 and k >= 0
          and are_residual(params, strategy, k) < ARE_TOL
          and _power_ok(feedback_power(strategy, k), budget.kappa, saturate))
    return ok, flags, f


def _certified_result(params, budget, strategy, k, kind, regime=None, saturate=True):
    ok, flags, f = certify(params, budget, strategy, k, saturate=saturate)
    if regime is None:
        regime = classify_regime(params, budget)
    return CapacityResult(
        rate=feedback_objective(params, strategy, k), regime=regime, strategy=strategy,
        error_variance=k, certified=ok, kind=kind, flags=flags, closed_loop=f)


def closed_form_rate(params: ChannelParams, budget: PowerBudget) -> float:
    """Rate of the unstable-noise closed form; finite down to the threshold itself.

    NaN where the logarithm's argument is not positive (possible for ``c**2 < 1``).
    """
    c, kw, kappa = params.c, params.k_w, budget.kappa
    a = c * c - 1.0
    arg = c * c * (a * kappa + kw) / (a * kw)
    return 0.5 * math.log(arg) if arg > 0 else math.nan


def closed_form_optimum(params: ChannelParams, budget: PowerBudget) -> tuple[float, float, float, float]:
    """``(rate, K, lam, k_z)`` from the unstable-noise closed form.

    Only meaningful for ``c**2 > 1``; ``k_z`` can come out negative just
    above the regime threshold, in which case the point is not a valid
    strategy.
    """
    c, kw, kappa = params.c, params.k_w, budget.kappa
    a = c * c - 1.0
    excess = kappa * a * a - kw
    rate = closed_form_rate(params, budget)
    k = excess / (c * c * a)
    lam = c * kw / excess
    k_z = kappa - kw * kw / (a * excess)
    return rate, k, lam, k_z


def feedback_capacity(params: ChannelParams, budget: PowerBudget) -> CapacityResult:
    """Feedback capacity of the AR(1)-noise channel under time-invariant inputs.

    Above the threshold ``k_w / (c^2 - 1)^2`` (unstable noise) the closed
    form applies.  Elsewhere feedback brings no gain and the certified IID
    rate is returned, marked ``kind="lower_bound"``.
    """
    regime = classify_regime(params, budget)
    if regime is not Regime.FEEDBACK_GAIN:
        res = iid_nofeedback_lower_bound(params, budget)
        res.kind = "lower_bound"
        res.notes.append("no feedback gain in this regime; IID achievable rate reported")
        return res
    rate, k, lam, k_z = closed_form_optimum(params, budget)
    if k_z < 0 or k <= 0:
        return CapacityResult(
            rate=rate, regime=regime, strategy=None, error_variance=k, certified=False,
            notes=[f"closed-form optimum has k_z={k_z:.6g} < 0; not a realizable strategy"])
    strategy = Strategy(lam, k_z)
    res = _certified_result(params, budget, strategy, k, "capacity", regime)
    # the closed form and the objective at the certified triple must agree
    if abs(res.rate - rate) > 1e-9 * max(1.0, rate):
        res.certified = False
        res.notes.append("objective disagrees with closed-form rate")
    res.rate = rate
    return res


def _iid_error_variance(c: float, kw: float, kappa: float) -> float:
    b = kappa * (1.0 - c * c) + kw
    disc = math.sqrt(b * b + 4.0 * c * c * kw * kappa)
    if b >= 0:
        # rationalized root; also covers c == 0 where it is kappa*kw/(kappa+kw)
        return 2.0 * kappa * kw / (b + disc) if kappa > 0 else 0.0
    return (-b + disc) / (2.0 * c * c)


def iid_rate_closed_form(params: ChannelParams, budget: PowerBudget) -> float:
    """Single-expression IID rate, independent of the Riccati root."""
    c, kw, kappa = params.c, params.k_w, budget.kappa
    b = kappa * (1.0 - c * c) + kw
    num = kappa * (1.0 + c * c) + kw + math.sqrt(b * b + 4.0 * c * c * kw * kappa)
    return 0.5 * math.log(num / (2.0 * kw))


def iid_nofeedback_lower_bound(params: ChannelParams, budget: PowerBudget) -> CapacityResult:
    validate(params, budget)
    k = _iid_error_variance(params.c, params.k_w, budget.kappa)
    res = _certified_result(params, budget, Strategy(0.0, budget.kappa), k, "lower_bound")
    return res


def _positive_root(a, b, kz, kw):
    """Largest root of ``a K^2 + b K - kw kz = 0`` for array inputs."""
    disc = np.sqrt(b * b + 4.0 * a * kw * kz)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = 2.0 * kw * kz / (b + disc)
        large = (disc - b) / (2.0 * a)
    return np.where(b >= 0, small, large)


def _markov_rates(params, kappa, lams):
    c, kw = params.c, params.k_w
    lams = np.asarray(lams, dtype=float)
    kz = kappa * (1.0 - lams * lams)
    h2 = (lams - c) ** 2
    b = kw * (1.0 - lams * lams) + kz * (1.0 - c * c)
    k = _positive_root(h2, b, kz, kw)
    k = np.where(kz > 0, k, 0.0)
    return 0.5 * np.log((h2 * k + kz + kw) / kw)


def markov_nofeedback_lower_bound(params: ChannelParams, budget: PowerBudget,
                                  grid_size: int = 4001, eps: float = 1e-4) -> CapacityResult:
    """Best rate over Gauss-Markov inputs ``X_t = lam X_{t-1} + Z_t`` without feedback.

    The input saturates its stationary power, ``k_z = kappa (1 - lam^2)``,
    leaving a one-dimensional search over ``lam``: a dense grid followed by
    bounded scalar refinement around the best grid point.
    """
    validate(params, budget)
    regime = classify_regime(params, budget)
    kappa = budget.kappa
    lams = np.append(np.linspace(-1.0 + eps, 1.0 - eps, grid_size), 0.0)
    # stable sort by |lam| so argmax resolves ties toward the smallest gain
    lams = lams[np.argsort(np.abs(lams), kind="stable")]
    rates = _markov_rates(params, kappa, lams)
    if not np.any(np.isfinite(rates)):
        raise OptimizerFailed("no feasible Markov input found")
    i = int(np.nanargmax(rates))
    best_lam, best_rate = float(lams[i]), float(rates[i])

    step = 2.0 * (1.0 - eps) / (grid_size - 1)
    lo, hi = max(-1.0 + eps, best_lam - step), min(1.0 - eps, best_lam + step)
    if kappa > 0 and hi > lo:
        refined = optimize.minimize_scalar(
            lambda x: -float(_markov_rates(params, kappa, [x])[0]),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if refined.success and -refined.fun > best_rate + 1e-15:
            best_lam, best_rate = float(refined.x), float(-refined.fun)

    strategy = Strategy(best_lam, kappa * (1.0 - best_lam * best_lam))
    k = nofeedback_are_root(params, strategy) if strategy.k_z > 0 else 0.0
    _, f = nofeedback_gain_and_map(params, strategy, k)
    # recompute from the scalar path so the reported rate matches the triple
    rate = 0.5 * math.log(((best_lam - params.c) ** 2 * k + strategy.k_z + params.k_w) / params.k_w)
    power = strategy.k_z / (1.0 - best_lam ** 2)
    ok = abs(f) < 1.0 and _power_ok(power, kappa, saturate=True)
    return CapacityResult(rate=rate, regime=regime, strategy=strategy, error_variance=k,
                          certified=ok, kind="lower_bound", closed_loop=f)


def noise_cancellation_lower_bound(params: ChannelParams, budget: PowerBudget) -> CapacityResult:
    """Rate of the feedback strategy ``lam = -c`` that cancels the predictable noise."""
    validate(params, budget)
    c, kw, kappa = params.c, params.k_w, budget.kappa
    if abs(c) >= 1.0:
        raise OutOfScope(f"noise cancellation needs |c| < 1, got c={c}")
    s = 1.0 - c * c
    b = kw - kappa * s
    disc = math.sqrt(b * b + 4.0 * kappa * kw * s * s)
    if kappa == 0:
        k_z = 0.0
    elif b > 0:
        k_z = 2.0 * kappa * kw * s / (b + disc)
    else:
        k_z = (-b + disc) / (2.0 * s)
    k = k_z * kw / ((k_z + kw) * s)
    return _certified_result(params, budget, Strategy(-c, k_z), k, "lower_bound")


def water_filling_reference(params: ChannelParams, budget: PowerBudget) -> float:
    """Nofeedback capacity of the stationary AR(1) noise channel (unit ``k_w``).

    Valid only when the water level clears the noise spectrum everywhere,
    i.e. above ``1/(1-|c|)^2 - 1/(1-c^2)``.
    """
    validate(params, budget)
    c = params.c
    if params.k_w != 1.0 or abs(c) >= 1.0:
        raise OutOfScope("water-filling formula needs k_w == 1 and |c| < 1")
    thr = water_filling_threshold(c)
    if budget.kappa <= thr:
        raise OutOfValidityRange(f"kappa={budget.kappa} <= validity threshold {thr:.6g}")
    return 0.5 * math.log(1.0 + budget.kappa + c * c / (1.0 - c * c))


def water_filling_threshold(c: float) -> float:
    return 1.0 / (1.0 - abs(c)) ** 2 - 1.0 / (1.0 - c * c)


def _kim_quartic(lam, c, kw, kappa):
    return kw * lam ** 2 * (lam ** 2 - 1.0) - kappa * (lam + c) ** 2


def kim_solutions(params: ChannelParams, budget: PowerBudget) -> tuple[CapacityResult, CapacityResult]:
    """The two solutions of the stationary problem with ``k_z = 0``.

    Solution 1 takes the positive ARE root ``k_w (lam^2 - 1) / (lam + c)^2``
    with ``|lam| > 1`` and power saturation, giving rate ``ln|lam|``; its
    strategy is not stabilizable.  Solution 2 is the zero error variance
    that the Riccati recursion actually reaches from ``K_0 = 0``.
    """
    validate(params, budget)
    c, kw, kappa = params.c, params.k_w, budget.kappa
    if abs(c) >= 1.0:
        raise OutOfScope(f"stable noise required, got c={c}")
    regime = classify_regime(params, budget)
    lam_max = 10.0 * max(1.0, math.sqrt(kappa / kw) + 1.0)
    roots = []
    for sign in (1.0, -1.0):
        g = lambda s: _kim_quartic(sign * s, c, kw, kappa)
        lo = 1.0
        if not (g(lo) < 0 < g(lam_max)):
            continue
        s = optimize.brentq(g, lo, lam_max, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        roots.append(sign * s)
    if not roots:
        raise RootFindFailed(f"no root with |lam| > 1 for c={c}, kappa={kappa}")
    # largest |lam| maximizes ln|lam|; the positive root wins a tie
    lam = max(roots, key=lambda x: (abs(x), x))
    k = kw * (lam * lam - 1.0) / (lam + c) ** 2
    s1 = Strategy(lam, 0.0)
    _, f1 = kalman_gain_and_map(params, s1, k)
    sol1 = CapacityResult(rate=math.log(abs(lam)), regime=regime, strategy=s1,
                          error_variance=k, certified=False, kind="kim",
                          flags=structural_tests(params, s1), closed_loop=f1,
                          notes=["positive ARE root; not reachable from K_0 = 0"])
    s2 = Strategy(0.0, 0.0)
    _, f2 = kalman_gain_and_map(params, s2, 0.0)
    sol2 = CapacityResult(rate=0.0, regime=regime, strategy=s2, error_variance=0.0,
                          certified=True, kind="kim", flags=structural_tests(params, s2),
                          closed_loop=f2, notes=["Riccati limit from K_0 = 0"])
    return sol1, sol2


@dataclass
class KktResiduals:
    stationarity: tuple
    complementary: tuple
    primal: tuple
    multipliers: tuple
    dual_feasible: bool

    @property
    def max_residual(self) -> float:
        return max(abs(x) for x in self.stationarity + self.complementary + self.primal)


def kkt_multipliers(params: ChannelParams, budget: PowerBudget) -> tuple[float, float, float, float]:
    c, kw, kappa = params.c, params.k_w, budget.kappa
    return c * c / (kw - kappa * (1.0 - c * c)), c * c, 0.0, 0.0


def kkt_residuals(params: ChannelParams, budget: PowerBudget, strategy: Strategy, k: float,
                  multipliers: tuple) -> KktResiduals:
    """Residuals of the first-order conditions of the capacity problem.

    The Lagrangian is::

        L = (lam+c)^2 K + k_z + k_w - l1 g - l2 (lam^2 K + k_z - kappa) + l3 K + l4 k_z

    with ``g`` the ARE written as ``(K - c^2 K - k_w)(k_z + k_w + (lam+c)^2 K)
    + (k_w + c K (lam+c))^2``.  Stationarity entries are the exact partial
    derivatives with respect to ``(k_z, lam, K)``.
    """
    c, kw, kappa = params.c, params.k_w, budget.kappa
    lam, kz = strategy.lam, strategy.k_z
    l1, l2, l3, l4 = multipliers
    cc = lam + c
    p = k - c * c * k - kw
    q = kz + kw + cc * cc * k
    r = kw + c * k * cc
    g = p * q + r * r
    power = lam * lam * k + kz

    d_kz = 1.0 - l1 * p - l2 + l4
    d_lam = 2.0 * cc * k - l1 * (2.0 * p * cc * k + 2.0 * r * c * k) - 2.0 * l2 * lam * k
    d_k = (cc * cc - l1 * ((1.0 - c * c) * q + p * cc * cc + 2.0 * r * c * cc)
           - l2 * lam * lam + l3)
    return KktResiduals(
        stationarity=(d_kz, d_lam, d_k),
        complementary=(l2 * (power - kappa), l3 * k, l4 * kz),
        primal=(max(0.0, power - kappa), g, max(0.0, -k), max(0.0, -kz)),
        multipliers=(l1, l2, l3, l4),
        dual_feasible=l2 >= 0 and l3 >= 0 and l4 >= 0,
    )


def time_sharing_rate(params: ChannelParams, budget: PowerBudget, theta: float,
                      kappa1: float, kappa2: float) -> float:
    """Rate of spending a fraction ``theta`` of time on the feedback strategy.

    The feedback leg runs at power ``kappa1`` and the IID leg at ``kappa2``;
    the average power must stay within the budget.
    """
    validate(params, budget)
    tol = POWER_TOL * max(1.0, budget.kappa)
    if not 0.0 <= theta <= 1.0 or kappa1 < 0 or kappa2 < 0:
        raise InfeasibleSplit(f"bad split theta={theta}, kappa1={kappa1}, kappa2={kappa2}")
    if theta * kappa1 + (1.0 - theta) * kappa2 > budget.kappa + tol:
        raise InfeasibleSplit("split exceeds the average power budget")
    rate = 0.0
    if theta > 0:
        leg = PowerBudget(kappa1)
        if classify_regime(params, leg) is not Regime.FEEDBACK_GAIN:
            raise InfeasibleSplit(f"kappa1={kappa1} is not in the feedback-gain regime")
        rate += theta * feedback_capacity(params, leg).rate
    if theta < 1:
        rate += (1.0 - theta) * iid_nofeedback_lower_bound(params, PowerBudget(kappa2)).rate
    return rate


def time_sharing_envelope(params: ChannelParams, budget: PowerBudget, thetas=None,
                          kappa1_grid=None) -> tuple[float, float, float, float]:
    """Best time-sharing split on a grid: ``(rate, theta, kappa1, kappa2)``.

    ``kappa2`` is chosen to use the remaining power exactly.  The pure IID
    and pure feedback splits are always included.
    """
    validate(params, budget)
    kappa = budget.kappa
    if thetas is None:
        thetas = np.linspace(0.0, 1.0, 101)
    thr = regime_threshold(params)
    if kappa1_grid is None:
        kappa1_grid = [] if math.isinf(thr) else thr * np.geomspace(1.0 + 1e-6, 1e3, 200)
    best = (iid_nofeedback_lower_bound(params, budget).rate, 0.0, 0.0, kappa)
    for theta in thetas:
        for k1 in kappa1_grid:
            if theta <= 0 or theta * k1 > kappa:
                continue
            k2 = kappa if theta >= 1 else (kappa - theta * k1) / (1.0 - theta)
            if theta >= 1 and k1 > kappa:
                continue
            rate = time_sharing_rate(params, budget, float(theta), float(k1), float(k2))
            if rate > best[0]:
                best = (rate, float(theta), float(k1), float(k2))
    return best


def _search_grid(params, kappa, lams, kzs):
    c, kw = params.c, params.k_w
    lam, kz = np.meshgrid(lams, kzs, indexing="ij")
    cc = lam + c
    a = cc * cc
    b = kz * (1.0 - c * c) + kw * (1.0 - lam * lam)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        k = _positive_root(a, b, kz, kw)
        k = np.where(kz > 0, k, 0.0)
        f = (c * kz - kw * lam) / (kz + kw + a * k)
        power = lam * lam * k + kz
        ok = (np.isfinite(k) & (k >= 0) & (np.abs(f) < 1.0) & (power <= kappa)
              & ((np.abs(c) < 1.0) | (cc != 0.0))
              & ((kz > 0) | (np.abs(lam) < 1.0)))
        rate = np.where(ok, 0.5 * np.log((a * k + kz + kw) / kw), -np.inf)
    i, j = np.unravel_index(int(np.argmax(rate)), rate.shape)
    return float(rate[i, j]), float(lams[i]), float(kzs[j])


def feedback_rate_search(params: ChannelParams, budget: PowerBudget, lam_max: float | None = None,
                         coarse: tuple = (601, 201), fine: int = 41, levels: int = 40,
                         max_iter: int = 400) -> CapacityResult:
    """Brute-force maximum of the feedback objective over certified strategies.

    A coarse grid over ``(lam, k_z)`` is followed by repeated zooming around
    the incumbent, halving the window once the incumbent settles.  A point counts only if
    it is detectable, stabilizable, its positive ARE root gives ``|F| < 1``
    and it meets the power budget.  No closed form is used, so this is an
    independent check on :func:`feedback_capacity`.
    """
    validate(params, budget)
    kappa = budget.kappa
    if lam_max is None:
        lam_max = 20.0 * max(1.0, abs(params.c))
    lams = np.linspace(-lam_max, lam_max, coarse[0])
    kzs = np.unique(np.concatenate([np.linspace(0.0, kappa, coarse[1]),
                                    kappa * np.geomspace(1e-10, 1.0, coarse[1])]))
    rate, lam, kz = _search_grid(params, kappa, lams, kzs)
    if not math.isfinite(rate):
        raise OptimizerFailed("no certified strategy on the search grid")
    # windows wide enough to contain a slanted stretch of the power boundary
    w_lam = 8.0 * (lams[1] - lams[0])
    w_kz = 0.25 * kappa
    shrinks = 0
    for _ in range(max_iter):
        lams = np.linspace(lam - w_lam, lam + w_lam, fine)
        kzs = np.linspace(max(0.0, kz - w_kz), min(kappa, kz + w_kz), fine)
        r, l_, z_ = _search_grid(params, kappa, lams, kzs)
        moved_far = abs(l_ - lam) > 0.5 * w_lam or abs(z_ - kz) > 0.5 * w_kz
        if r > rate:
            rate, lam, kz = r, l_, z_
        # keep the window while the incumbent is still travelling
        if r <= rate and not moved_far:
            w_lam *= 0.5
            w_kz *= 0.5
            shrinks += 1
            if shrinks >= levels:
                break
    best = _search_result(params, budget, lam, kz)
    if best is None:
        raise OptimizerFailed(f"search incumbent lam={lam}, k_z={kz} lost certification")
    # grid points favour closeness to the power boundary over progress along
    # it, so finish with a constrained local solve from the incumbent
    polished = _polish(params, budget, lam, kz)
    if polished is not None and polished.rate > best.rate:
        best = polished
    return best


def _search_result(params, budget, lam, kz):
    strategy = Strategy(lam, max(kz, 0.0))
    sol = are_stabilizing_solution(params, strategy, strict=False)
    if sol.stabilizing_root is None:
        return None
    res = _certified_result(params, budget, strategy, sol.stabilizing_root, "search",
                            saturate=False)
    return res if res.certified else None


def _polish(params, budget, lam, kz):
    kappa, kw = budget.kappa, params.k_w

    def rate_power(x):
        rate, _, _, power = _search_point(params, x[0], x[1])
        return rate, power

    res = optimize.minimize(
        lambda x: -rate_power(x)[0], x0=[lam, kz], method="SLSQP",
        bounds=[(None, None), (0.0, kappa)],
        constraints=[{"type": "ineq", "fun": lambda x: (kappa - rate_power(x)[1]) / (kappa + kw)}],
        options={"ftol": 1e-15, "maxiter": 500})
    if not np.all(np.isfinite(res.x)):
        return None
    return _search_result(params, budget, float(res.x[0]), float(res.x[1]))


def _search_point(params, lam, kz):
    """Rate, ARE root, closed-loop map and power at one strategy (nan if invalid)."""
    c, kw = params.c, params.k_w
    a = (lam + c) ** 2
    b = kz * (1.0 - c * c) + kw * (1.0 - lam * lam)
    if kz <= 0:
        return -np.inf, np.nan, np.nan, np.inf
    k = float(_positive_root(np.float64(a), np.float64(b), kz, kw))
    if not np.isfinite(k) or k < 0:
        return -np.inf, np.nan, np.nan, np.inf
    rate = 0.5 * math.log((a * k + kz + kw) / kw)
    f = (c * kz - kw * lam) / (kz + kw + a * k)
    return rate, k, f, lam * lam * k + kz
