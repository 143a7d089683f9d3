"""Riccati recursions for estimating the channel noise from past outputs.

For a strategy ``(lam, k_z)`` the one-step prediction error ``K_t`` of the
noise state obeys a generalized (correlated-noise) difference Riccati
equation::

    K_t = c^2 K + k_w - (k_w + c K (lam + c))^2 / (k_z + k_w + (lam + c)^2 K)

with ``K = K_{t-1}``.  Everything here is scalar, so the algebraic Riccati
equation is a quadratic that we solve in closed form.

The recursions are evaluated in the equivalent single-fraction form::

    K_t = (K (c^2 k_z + k_w lam^2) + k_w k_z) / (k_z + k_w + (lam + c)^2 K)

which is nonnegative by construction and keeps ``K_t == 0`` exact when
``k_z == 0``.  The subtractive form loses that: for ``|lam| > 1`` the zero
fixed point is unstable and rounding noise of order 1e-17 grows until the
trajectory lands on the other root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .channel import ChannelParams, Strategy
from .errors import Diverged, Divergent, NoStabilizingSolution

DRE_TOL = 1e-12
ARE_TOL = 1e-9
MAX_STEPS = 1_000_000
DIVERGENCE_CEILING = 1e12


@dataclass(frozen=True)
class StructuralFlags:
    detectable: bool
    unit_circle_controllable: bool
    stabilizable: bool

    @property
    def all(self) -> bool:
        return self.detectable and self.unit_circle_controllable and self.stabilizable


@dataclass
class DreTrajectory:
    values: list = field(default_factory=list)
    converged: bool = False
    limit: float | None = None

    @property
    def steps(self) -> int:
        return len(self.values) - 1


@dataclass(frozen=True)
class AreSolution:
    roots: tuple
    stabilizing_root: float | None
    closed_loop: float
    flags: StructuralFlags


def dre_step_feedback(params: ChannelParams, strategy: Strategy, k_prev: float) -> float:
    c, kw = params.c, params.k_w
    lam, kz = strategy.lam, strategy.k_z
    num = k_prev * (c * c * kz + kw * lam * lam) + kw * kz
    return num / (kz + kw + (lam + c) ** 2 * k_prev)


def dre_step_nofeedback(params: ChannelParams, strategy: Strategy, k_prev: float) -> float:
    """Error-variance update for estimating a Gauss-Markov input from outputs.

    Here ``lam`` is the AR coefficient of the input itself and ``k_z`` its
    innovation variance; the observation sees ``X_t + V_t`` without feedback.
    """
    c, kw = params.c, params.k_w
    lam, kz = strategy.lam, strategy.k_z
    num = k_prev * (lam * lam * kw + c * c * kz) + kz * kw
    return num / (kz + kw + (lam - c) ** 2 * k_prev)


def lyapunov_fixed_point(strategy: Strategy) -> float:
    """Stationary variance ``k_z / (1 - lam^2)`` of the input AR(1) process."""
    lam, kz = strategy.lam, strategy.k_z
    if abs(lam) >= 1.0:
        if kz > 0:
            raise Divergent(f"|lam|={abs(lam)} >= 1 accumulates variance without bound")
        # K_X stays at its zero start
        return 0.0
    return kz / (1.0 - lam * lam)


def kalman_gain_and_map(params: ChannelParams, strategy: Strategy, k: float) -> tuple[float, float]:
    """Filter gain ``M`` and closed-loop error map ``F = c - M (lam + c)``."""
    c, kw = params.c, params.k_w
    lam, kz = strategy.lam, strategy.k_z
    gain_c = lam + c
    denom = kz + kw + gain_c * gain_c * k
    m = (kw + c * k * gain_c) / denom
    # c - m*gain_c simplified; avoids cancellation when F is small
    f = (c * kz - kw * lam) / denom
    return m, f


def nofeedback_gain_and_map(params: ChannelParams, strategy: Strategy, k: float) -> tuple[float, float]:
    c, kw = params.c, params.k_w
    lam, kz = strategy.lam, strategy.k_z
    h = lam - c
    denom = kz + kw + h * h * k
    m = (kz + lam * k * h) / denom
    f = (lam * kw + c * kz) / denom
    return m, f


def structural_tests(params: ChannelParams, strategy: Strategy) -> StructuralFlags:
    c, lam, kz = params.c, strategy.lam, strategy.k_z
    detectable = abs(c) < 1.0 or (lam + c) != 0.0
    if kz > 0:
        return StructuralFlags(detectable, True, True)
    # k_z == 0: the auxiliary pair reduces to {-lam, 0}
    return StructuralFlags(detectable, abs(lam) != 1.0, abs(lam) < 1.0)


def are_coefficients(params: ChannelParams, strategy: Strategy) -> tuple[float, float, float]:
    """Coefficients ``(a, b, d)`` of ``a K^2 + b K + d = 0``."""
    c, kw = params.c, params.k_w
    lam, kz = strategy.lam, strategy.k_z
    a = (lam + c) ** 2
    b = kz * (1.0 - c * c) + kw * (1.0 - lam * lam)
    d = -kw * kz
    return a, b, d


def _quadratic_roots(a: float, b: float, d: float) -> tuple:
    if a == 0.0:
        if b == 0.0:
            # degenerate identity 0 = d; only the zero state is reported
            return (0.0,) if d == 0.0 else ()
        return (-d / b,)
    disc = b * b - 4.0 * a * d
    if disc < 0:
        return ()
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    if q == 0.0:
        return (0.0,)
    r1, r2 = q / a, d / q
    return tuple(sorted({r1 + 0.0, r2 + 0.0}))  # no signed zeros


def are_roots(params: ChannelParams, strategy: Strategy) -> tuple:
    return _quadratic_roots(*are_coefficients(params, strategy))


def are_residual(params: ChannelParams, strategy: Strategy, k: float) -> float:
    """Relative fixed-point residual ``|step(K) - K| / (|K| + k_w)``."""
    return abs(dre_step_feedback(params, strategy, k) - k) / (abs(k) + params.k_w)


def are_stabilizing_solution(params: ChannelParams, strategy: Strategy,
                             strict: bool = True) -> AreSolution:
    """Solve the algebraic Riccati equation and pick the stabilizing root.

    Parameters
    ----------
    params, strategy
        Channel and time-invariant input strategy.
    strict : bool
        Raise :class:`NoStabilizingSolution` when no stabilizing root exists.
        With ``strict=False`` the roots are still reported and
        ``stabilizing_root`` is ``None``.

    Returns
    -------
    AreSolution
        ``closed_loop`` is ``F`` evaluated at the stabilizing root, or NaN
        when there is none.
    """
    flags = structural_tests(params, strategy)
    roots = are_roots(params, strategy)
    stab = None
    if flags.detectable and flags.stabilizable:
        for k in roots:
            if k < 0:
                continue
            _, f = kalman_gain_and_map(params, strategy, k)
            if abs(f) < 1.0:
                stab = k
                break
    if stab is None:
        if strict:
            raise NoStabilizingSolution(
                f"no stabilizing ARE root for {params!r}, {strategy!r} ({flags})")
        return AreSolution(roots, None, math.nan, flags)
    _, f = kalman_gain_and_map(params, strategy, stab)
    return AreSolution(roots, stab, f, flags)


def nofeedback_are_root(params: ChannelParams, strategy: Strategy) -> float:
    """Stabilizing fixed point of :func:`dre_step_nofeedback`.

    The nofeedback recursion with coefficient ``lam`` coincides with the
    feedback recursion at ``-lam``, so the feedback solver is reused.
    """
    mirrored = Strategy(-strategy.lam, strategy.k_z)
    return are_stabilizing_solution(params, mirrored).stabilizing_root


def dre_iterate(params: ChannelParams, strategy: Strategy, k0: float = 0.0,
                max_steps: int = MAX_STEPS, tol: float = DRE_TOL,
                residual_tol: float = ARE_TOL, ceiling: float = DIVERGENCE_CEILING,
                record: bool = True) -> DreTrajectory:
    """Iterate the feedback DRE from ``k0`` until successive values settle.

    ``converged`` requires both a successive difference below ``tol`` and an
    ARE residual below ``residual_tol`` at the terminal value.  Only the
    first and last values are kept when ``record`` is false.
    """
    if k0 < 0:
        raise ValueError(f"k0={k0} must be >= 0")
    k = float(k0)
    values = [k]
    for _ in range(max_steps):
        k_next = dre_step_feedback(params, strategy, k)
        if not k_next <= ceiling:
            raise Diverged(f"DRE exceeded {ceiling:g} for {params!r}, {strategy!r}")
        if record:
            values.append(k_next)
        # near large fixed points tol can be below one ulp; a few ulps of
        # jitter then means the fixed point has been reached
        done = abs(k_next - k) < max(tol, 4.0 * math.ulp(k_next))
        k = k_next
        if done:
            if not record:
                values.append(k)
            ok = are_residual(params, strategy, k) < residual_tol
            return DreTrajectory(values, ok, k if ok else None)
    if not record:
        values.append(k)
    return DreTrajectory(values, False, None)


def dre_trajectory(params: ChannelParams, strategy: Strategy, n: int, k0: float = 0.0) -> list:
    """The first ``n + 1`` values ``K_0 .. K_n`` of the feedback DRE."""
    ks = [float(k0)]
    for _ in range(n):
        ks.append(dre_step_feedback(params, strategy, ks[-1]))
    return ks
