"""Deterministic out-of-distribution risk equivalents and their optimizers.

The prediction risk of the (possibly negatively) penalized least-squares fit
decomposes into four deterministic terms, all functions of the implicit
regularization level mu and the data aspect ratio phi:

    bias     = mu^2 b'(S+mu I)^-1 (tv S + S0) (S+mu I)^-1 b
    variance = sigma2 * tv
    shift    = 2 mu b'(S+mu I)^-1 S0 (b0 - b)        (regression-shift cross term)
    kappa2   = (b0-b)' S0 (b0-b) + sigma0_sq         (irreducible)

with ``tv`` from :func:`ridgeshift.fixed_point.tilde_v`. The same expressions
evaluated at the level solved at a subsample aspect psi >= phi give the risk
of the full average of fits over all size-k subsamples (psi = p/k), which is
how penalties and subsample ratios trade off along equivalence contours.

Isotropic-random signals replace the rank-one signal matrix by its
expectation, energy/p times the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import BelowMinimumPenaltyError, BranchViolationError, InvalidParameterError
from .fixed_point import (
    PSI_INFINITE,
    lambda_min,
    solve_mu,
    solve_mu_grid,
    tilde_v,
)
from .model import ShiftModel

BoundaryFlag = Literal["interior", "at-lambda-min", "at-infinity-null", "at-floor", "degenerate"]


@dataclass(frozen=True)
class RiskDecomposition:
    """Additive risk decomposition; ``total`` is the exact sum of the parts."""

    bias: float
    variance: float
    shift: float
    kappa2: float
    total: float

    @classmethod
    def from_parts(cls, bias: float, variance: float, shift: float, kappa2: float):
        return cls(bias=bias, variance=variance, shift=shift, kappa2=kappa2,
                   total=bias + variance + shift + kappa2)


def _kappa2(model: ShiftModel) -> float:
    if model.is_isotropic_signal or not model.has_regression_shift:
        return model.sigma0_sq
    d = model.beta0 - model.beta
    return float(d @ model.sigma0_matrix @ d) + model.sigma0_sq


def risk_at_mu(model: ShiftModel, mu: float, phi: float) -> RiskDecomposition:
    """Risk equivalents parameterized directly by the level mu (admissible for
    some aspect >= phi). Used by everything else; also the natural object for
    finite-difference checks of the mu-derivatives."""
    kappa2 = _kappa2(model)
    if math.isinf(mu):
        # penalty (or subsampling) strong enough to kill the fit: null risk
        if model.is_isotropic_signal:
            bias = model.alpha2 * float(np.mean(model.sigma0_diag))
            shift = 0.0
        else:
            bias = float(model.beta @ model.sigma0_matrix @ model.beta)
            shift = 2.0 * float(model.beta @ model.sigma0_matrix @ (model.beta0 - model.beta))
        return RiskDecomposition.from_parts(bias, 0.0, shift, kappa2)

    tv = tilde_v(model, mu, phi)
    if model.is_isotropic_signal:
        r = model.spectrum.eigenvalues
        bias = model.alpha2 * mu**2 * float(
            np.mean((tv * r + model.sigma0_diag) / (r + mu) ** 2)
        )
        shift = 0.0
    else:
        bias = mu**2 * (
            tv * model.signal_form(mu, power=2, sigma_power=1, right="beta")
            + model.signal_sigma0_form(mu, 1, 1, right="beta")
        )
        shift = 2.0 * mu * model.signal_sigma0_form(mu, 1, 0, right="shift")
    variance = model.sigma2 * tv
    return RiskDecomposition.from_parts(bias, variance, shift, kappa2)


def risk_decomposition(model: ShiftModel, lam: float, phi: float) -> RiskDecomposition:
    """Plain-ridge risk equivalents at penalty ``lam``; requires
    lam > lambda_min(phi)."""
    mu = solve_mu(model.spectrum, lam, phi).mu
    return risk_at_mu(model, mu, phi)


def ensemble_risk(model: ShiftModel, lam: float, phi: float, psi: float) -> RiskDecomposition:
    """Risk equivalents of the full subsample-average fit at subsample aspect
    psi in [phi, inf]. The level is solved at aspect psi; psi = phi recovers
    :func:`risk_decomposition` exactly. The boundary lam = lambda_min(psi) is
    admissible (finite) whenever psi > phi.
    """
    if psi != PSI_INFINITE and psi < phi - 1e-12:
        raise InvalidParameterError(f"invalid subsample ratio: psi={psi} below phi={phi}")
    sol = solve_mu(model.spectrum, lam, psi, boundary_ok=psi > phi)
    return risk_at_mu(model, sol.mu, phi)


# -- mu-derivatives ----------------------------------------------------------

def risk_mu_derivative(model: ShiftModel, mu: float, phi: float) -> tuple[float, float, float]:
    """Analytic derivatives (d bias/d mu, d variance/d mu, d shift/d mu).

    Assembled from the building blocks

        q_b(A, B) = mu^2 b'(S+mu I)^-1 A (S+mu I)^-1 b
        q_v(A)    = phi tr[A S (S+mu I)^-2] / p

    and their mu-derivatives; the variance derivative is strictly negative on
    the whole admissible branch.
    """
    sp = model.spectrum
    denom = 1.0 - phi * sp.resolvent_trace(mu, power=2, sigma_power=2)
    if denom <= 0.0:
        raise BranchViolationError(f"mu={mu} below the branch edge at phi={phi}")

    qv_s = phi * sp.resolvent_trace(mu, power=2, sigma_power=2)       # q_v(S, S)
    qv_s0 = phi * model.sigma0_resolvent_trace(mu, power=2, sigma_power=1)
    dqv_s = -2.0 * phi * sp.resolvent_trace(mu, power=3, sigma_power=2)
    dqv_s0 = -2.0 * phi * model.sigma0_resolvent_trace(mu, power=3, sigma_power=1)

    if model.is_isotropic_signal:
        a2 = model.alpha2
        qb_s = a2 * mu**2 * sp.resolvent_trace(mu, power=2, sigma_power=1)
        dqb_s = a2 * (
            2.0 * mu * sp.resolvent_trace(mu, power=2, sigma_power=1)
            - 2.0 * mu**2 * sp.resolvent_trace(mu, power=3, sigma_power=1)
        )
        s0_trace2 = float(np.mean(model.sigma0_diag / (sp.eigenvalues + mu) ** 2))
        s0_trace3 = float(np.mean(model.sigma0_diag / (sp.eigenvalues + mu) ** 3))
        qb_s0 = a2 * mu**2 * s0_trace2
        dqb_s0 = a2 * (2.0 * mu * s0_trace2 - 2.0 * mu**2 * s0_trace3)
        d_shift = 0.0
    else:
        sand_11 = model.signal_form(mu, power=2, sigma_power=1, right="beta")
        sand_12 = model.signal_form(mu, power=3, sigma_power=1, right="beta")
        qb_s = mu**2 * sand_11
        dqb_s = 2.0 * mu * sand_11 - 2.0 * mu**2 * sand_12
        s0_11 = model.signal_sigma0_form(mu, 1, 1, right="beta")
        s0_21 = model.signal_sigma0_form(mu, 2, 1, right="beta")
        qb_s0 = mu**2 * s0_11
        dqb_s0 = 2.0 * mu * s0_11 - 2.0 * mu**2 * s0_21
        # d/dmu [2 mu b'(S+mu I)^-1 S0 (b0-b)] = 2 b' S (S+mu I)^-2 S0 (b0-b)
        r = sp.eigenvalues
        wl = model.beta * r / (r + mu) ** 2
        d_shift = 2.0 * float(wl @ model.sigma0_matrix @ (model.beta0 - model.beta))

    one_m = 1.0 - qv_s
    d_bias = (
        dqv_s0 * qb_s * one_m + qv_s0 * dqb_s * one_m + qv_s0 * qb_s * dqv_s
    ) / one_m**2 + dqb_s0
    d_var = model.sigma2 * (dqv_s0 * one_m + qv_s0 * dqv_s) / one_m**2
    return d_bias, d_var, d_shift


# -- optimizers ---------------------------------------------------------------

@dataclass(frozen=True)
class SearchOptions:
    """Controls for the penalty scan: a log grid in t = lam - lambda_min over
    [t_min, t_max] * (1 + |lambda_min|), then golden-section refinement around
    every detected local minimum."""

    grid_points: int = 240
    t_min: float = 1e-6
    t_max: float = 1e6
    lambda_floor: float | None = None
    rel_tol: float = 1e-9


@dataclass(frozen=True)
class OptimalPoint:
    lambda_star: float
    risk_star: float
    mu_star: float
    boundary_flag: BoundaryFlag
    local_minima: tuple[tuple[float, float], ...] = ()


def _golden_min(f, a: float, b: float, rel_tol: float) -> tuple[float, float]:
    """Golden-section minimum of a unimodal f on [a, b]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > rel_tol * (1.0 + abs(a) + abs(b)):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    xm = 0.5 * (a + b)
    return xm, f(xm)


def _risk_total_grid(model: ShiftModel, mus: np.ndarray, phi: float) -> np.ndarray:
    """Vectorized total risk over an array of admissible levels."""
    sp = model.spectrum
    r = sp.eigenvalues
    res2 = sp.resolvent_trace_grid(mus, power=2, sigma_power=2)
    denom = 1.0 - phi * res2
    num = np.mean(model.sigma0_diag[None, :] * r[None, :] / (r[None, :] + mus[:, None]) ** 2, axis=1)
    tv = phi * num / denom
    kappa2 = _kappa2(model)
    if model.is_isotropic_signal:
        bias = model.alpha2 * mus**2 * np.mean(
            (tv[:, None] * r[None, :] + model.sigma0_diag[None, :])
            / (r[None, :] + mus[:, None]) ** 2,
            axis=1,
        )
        shift = np.zeros_like(mus)
    else:
        inv = 1.0 / (r[None, :] + mus[:, None])
        w = model.beta[None, :] * inv
        sand_s = np.sum(w * r[None, :] * w, axis=1)
        sand_s0 = np.einsum("ij,jk,ik->i", w, model.sigma0_matrix, w)
        bias = mus**2 * (tv * sand_s + sand_s0)
        dvec = model.sigma0_matrix @ (model.beta0 - model.beta)
        shift = 2.0 * mus * np.sum(w * dvec[None, :], axis=1)
    return bias + model.sigma2 * tv + shift + kappa2


def optimal_lambda(
    model: ShiftModel,
    phi: float,
    opts: SearchOptions | None = None,
) -> OptimalPoint:
    """Minimize the total risk over penalties above the admissible minimum.

    Coarse log-spaced scan of t = lam - lambda_min(phi), golden-section
    refinement around the best cell and every interior local minimum, global
    best returned together with all refined local minima.
    """
    opts = opts or SearchOptions()
    sp = model.spectrum
    lmin = lambda_min(sp, phi)
    scale = 1.0 + abs(lmin)
    t_lo = opts.t_min * scale
    t_hi = opts.t_max * scale
    floor_active = False
    if opts.lambda_floor is not None:
        t_floor = opts.lambda_floor - lmin
        if t_floor > t_hi:
            raise InvalidParameterError("lambda_floor above the search window")
        if t_floor > t_lo:
            t_lo = t_floor
            floor_active = True

    ts = np.geomspace(t_lo, t_hi, opts.grid_points)
    lams = lmin + ts
    mus = solve_mu_grid(sp, lams, phi)
    risks = _risk_total_grid(model, mus, phi)

    if float(np.nanmax(risks) - np.nanmin(risks)) <= 1e-14 * (1.0 + abs(float(np.nanmin(risks)))):
        mu0 = float(mus[0])
        return OptimalPoint(
            lambda_star=float(lams[0]), risk_star=float(risks[0]), mu_star=mu0,
            boundary_flag="degenerate",
        )

    def risk_of_log_t(log_t: float) -> float:
        lam = lmin + math.exp(log_t)
        mu = solve_mu(sp, lam, phi).mu
        return risk_at_mu(model, mu, phi).total

    log_ts = np.log(ts)
    candidates: list[tuple[float, float]] = []
    n = len(ts)
    is_local_min = np.zeros(n, dtype=bool)
    for i in range(n):
        left_ok = i == 0 or risks[i] <= risks[i - 1]
        right_ok = i == n - 1 or risks[i] <= risks[i + 1]
        is_local_min[i] = left_ok and right_ok
    for i in np.flatnonzero(is_local_min):
        a = log_ts[max(i - 1, 0)]
        b = log_ts[min(i + 1, n - 1)]
        if a == b:
            candidates.append((float(ts[i]), float(risks[i])))
            continue
        xm, fm = _golden_min(risk_of_log_t, float(a), float(b), opts.rel_tol)
        candidates.append((math.exp(xm), float(fm)))

    # drop near-duplicate minima, keep best-first
    candidates.sort(key=lambda c: c[1])
    kept: list[tuple[float, float]] = []
    for t, f in candidates:
        if all(abs(math.log(t) - math.log(t2)) > 1e-6 for t2, _ in kept):
            kept.append((t, f))

    t_star, risk_star = kept[0]
    lam_star = lmin + t_star
    mu_star = solve_mu(sp, lam_star, phi).mu

    flag: BoundaryFlag = "interior"
    if floor_active and t_star <= t_lo * (1.0 + 1e-9):
        flag = "at-floor"
    elif t_star <= 10.0 * opts.t_min * scale:
        flag = "at-lambda-min"
    elif t_star >= 0.1 * t_hi:
        null = model.null_risk()
        if abs(risk_star - null) <= 1e-8 * (1.0 + abs(null)):
            flag = "at-infinity-null"

    return OptimalPoint(
        lambda_star=float(lam_star),
        risk_star=float(risk_star),
        mu_star=float(mu_star),
        boundary_flag=flag,
        local_minima=tuple((float(lmin + t), float(f)) for t, f in kept),
    )


def optimal_psi(
    model: ShiftModel,
    lam: float,
    phi: float,
    opts: SearchOptions | None = None,
) -> tuple[float, float]:
    """Minimize the subsample-average risk over psi in [phi, inf] at a fixed
    penalty. Probes a log grid in psi - phi plus the infinite endpoint,
    refines the best interior cell by golden section; inadmissible probes
    (penalty below the minimum at that psi) are skipped."""
    opts = opts or SearchOptions()
    scale = 1.0 + phi

    def risk_at_psi(psi: float) -> float:
        try:
            return ensemble_risk(model, lam, phi, psi).total
        except (BranchViolationError, BelowMinimumPenaltyError):
            return math.inf

    ss = np.geomspace(1e-9 * scale, 1e6 * scale, opts.grid_points)
    psis = np.concatenate([[phi], phi + ss])
    risks = np.array([risk_at_psi(p) for p in psis])
    risks_inf = ensemble_risk(model, lam, phi, PSI_INFINITE).total

    i = int(np.argmin(risks))
    best_psi, best_risk = float(psis[i]), float(risks[i])
    if 0 < i < len(psis) - 1 and math.isfinite(best_risk):
        a = math.log(psis[i - 1] - phi + 1e-300) if i >= 2 else math.log(ss[0] * 1e-3)
        b = math.log(psis[i + 1] - phi)

        def f(log_s: float) -> float:
            return risk_at_psi(phi + math.exp(log_s))

        xm, fm = _golden_min(f, a, b, opts.rel_tol)
        if fm < best_risk:
            best_psi, best_risk = phi + math.exp(xm), float(fm)

    if risks_inf < best_risk:
        return PSI_INFINITE, float(risks_inf)
    return float(best_psi), float(best_risk)


def isotropic_optimal_risk(model: ShiftModel, phi: float) -> float:
    """Closed-form optimal risk for isotropic-random signals:

        alpha2 * mu* * tr[S0 (S + mu* I)^-1] / p + sigma0_sq

    evaluated at the level induced by the closed-form optimal penalty
    phi / snr. Matches the scanned optimum for these signals."""
    if not model.is_isotropic_signal:
        raise InvalidParameterError("invalid model: signal is not isotropic-random")
    if not (0.0 < model.snr < math.inf):
        raise InvalidParameterError("snr must be finite and positive")
    lam_star = phi / model.snr
    mu_star = solve_mu(model.spectrum, lam_star, phi).mu
    r = model.spectrum.eigenvalues
    return model.alpha2 * mu_star * float(np.mean(model.sigma0_diag / (r + mu_star))) + model.sigma0_sq
