"""Scalar fixed-point equations behind the deterministic risk equivalents.

The central object is the implicit regularization level ``mu(lam, phi)``,
the unique solution of

    mu = lam + phi * tr[mu S (S + mu I)^-1] / p

on the branch ``mu > mu_zero(phi)``, where ``mu_zero`` solves the spectrum
edge equation ``1 = phi * tr[S^2 (S + mu I)^-2] / p``. The edge value also
yields the minimum admissible (possibly negative) ridge penalty
``lambda_min(phi)``. On the admissible branch the map ``mu -> lam`` is a
strictly increasing bijection, so every root here is found by a safeguarded
Newton iteration inside a guaranteed bracket (bisection fallback).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BelowMinimumPenaltyError,
    BranchViolationError,
    InvalidParameterError,
    SolverFailureError,
)
from .model import ShiftModel, Spectrum

#: Sentinel for an infinite subsample aspect ratio (the null-risk endpoint).
PSI_INFINITE = math.inf

RESIDUAL_TOL = 1e-12
MAX_BISECT = 200
MAX_NEWTON = 50
_EDGE_EPS = 1e-10


@dataclass(frozen=True)
class FixedPointSolution:
    """One admissible solution of the penalty equation.

    ``v`` is the reciprocal 1/mu, flagged infinite at mu = 0 (ridgeless,
    underparameterized); consumers should use ``mu`` directly.
    """

    lam: float
    phi: float
    psi: float
    mu: float
    v: float
    residual: float


def _check_phi(phi: float) -> None:
    if not (phi > 0.0) or not np.isfinite(phi):
        raise InvalidParameterError(f"aspect ratio must be positive and finite, got {phi}")


def _solve_monotone(f, fprime, lo: float, hi: float, increasing: bool):
    """Root of a strictly monotone f on a bracket [lo, hi] with f(lo), f(hi)
    of opposite sign. Newton steps are taken when they stay inside the
    bracket, bisection otherwise; terminates on bracket collapse."""
    flo, fhi = f(lo), f(hi)
    sign = 1.0 if increasing else -1.0
    if sign * flo > 0.0 or sign * fhi < 0.0:
        raise SolverFailureError(
            f"bracket [{lo}, {hi}] does not enclose a root (f(lo)={flo}, f(hi)={fhi})"
        )
    x = 0.5 * (lo + hi)
    for _ in range(MAX_BISECT + MAX_NEWTON):
        fx = f(x)
        if sign * fx > 0.0:
            hi = x
        else:
            lo = x
        # relative bracket collapse, so tiny roots keep full relative accuracy
        if hi - lo <= 1e-15 * max(abs(lo), abs(hi)) + 1e-300:
            break
        dfx = fprime(x)
        step_ok = False
        if dfx != 0.0 and np.isfinite(dfx):
            x_new = x - fx / dfx
            if lo < x_new < hi:
                x = x_new
                step_ok = True
        if not step_ok:
            x = 0.5 * (lo + hi)
    return x


def mu_zero(spectrum: Spectrum, phi: float) -> float:
    """Edge of the admissible branch: the unique mu0 > -r_min with
    phi * tr[S^2 (S + mu0 I)^-2] / p = 1.

    Negative for phi < 1, zero at phi = 1, positive for phi > 1.
    """
    _check_phi(phi)
    r = spectrum.eigenvalues

    def g(mu: float) -> float:
        return phi * float(np.mean((r / (r + mu)) ** 2)) - 1.0

    def gprime(mu: float) -> float:
        return -2.0 * phi * float(np.mean(r**2 / (r + mu) ** 3))

    # g decreases from +inf (mu -> -r_min) to -1 (mu -> inf).
    r_min = spectrum.r_min
    delta = 0.5 * r_min
    lo = -r_min + delta
    while g(lo) <= 0.0:
        delta *= 0.5
        lo = -r_min + delta
        if delta < 1e-300:
            raise SolverFailureError("could not bracket the spectrum edge equation")
    hi = max(1.0, spectrum.r_max)
    while g(hi) >= 0.0:
        hi *= 2.0
        if hi > 1e300:
            raise SolverFailureError("edge equation bracket expansion diverged")
    mu0 = _solve_monotone(g, gprime, lo, hi, increasing=False)
    # a machine-accurate root still carries residual ~ ulp(mu0) * |g'| when
    # the edge is steep (tiny phi), so the check is conditioning-aware
    tol = RESIDUAL_TOL * max(1.0, phi) + 32.0 * np.finfo(float).eps * (
        abs(mu0) + spectrum.r_min
    ) * abs(gprime(mu0))
    if abs(g(mu0)) > tol:
        raise SolverFailureError(f"edge equation residual {g(mu0):.3e} above tolerance")
    return float(mu0)


def lambda_of_mu(spectrum: Spectrum, mu: float, aspect: float) -> float:
    """Penalty on the admissible branch that induces the level ``mu``:
    lam = mu * (1 - aspect * tr[S (S + mu I)^-1] / p)."""
    _check_phi(aspect)
    if mu == 0.0:
        return 0.0
    if math.isinf(mu):
        return math.inf
    return mu * (1.0 - aspect * spectrum.resolvent_trace(mu, power=1, sigma_power=1))


def lambda_min(spectrum: Spectrum, phi: float) -> float:
    """Minimum admissible ridge penalty: the value of the penalty equation at
    the branch edge. Nonpositive everywhere, zero exactly at phi = 1."""
    mu0 = mu_zero(spectrum, phi)
    return lambda_of_mu(spectrum, mu0, phi)


def solve_mu(
    spectrum: Spectrum,
    lam: float,
    aspect: float,
    *,
    boundary_ok: bool = False,
) -> FixedPointSolution:
    """Solve the penalty equation for mu at penalty ``lam`` and aspect ratio
    ``aspect``, on the branch mu > mu_zero(aspect).

    Requires lam > lambda_min(aspect). With ``boundary_ok`` a penalty within
    round-off of the minimum returns the edge solution instead of raising
    (used by ensemble evaluations where the edge is admissible).
    """
    if aspect == PSI_INFINITE:
        return FixedPointSolution(lam=lam, phi=aspect, psi=aspect, mu=math.inf, v=0.0, residual=0.0)
    _check_phi(aspect)

    mu0 = mu_zero(spectrum, aspect)
    lmin = lambda_of_mu(spectrum, mu0, aspect)
    edge_tol = 1e-11 * (1.0 + abs(lmin))
    if lam <= lmin + edge_tol:
        if boundary_ok and lam >= lmin - edge_tol:
            return FixedPointSolution(
                lam=lam, phi=aspect, psi=aspect, mu=mu0,
                v=math.inf if mu0 == 0.0 else 1.0 / mu0,
                residual=abs(lam - lmin),
            )
        raise BelowMinimumPenaltyError(
            f"penalty {lam} is not above the minimum {lmin} at aspect {aspect}"
        )

    r = spectrum.eigenvalues
    if lam == 0.0 and aspect < 1.0:
        mu = 0.0  # ridgeless, underparameterized: exact root
    else:
        def f(mu: float) -> float:
            return mu * (1.0 - aspect * float(np.mean(r / (r + mu)))) - lam

        def fprime(mu: float) -> float:
            return 1.0 - aspect * float(np.mean((r / (r + mu)) ** 2))

        lo = mu0 + _EDGE_EPS * (1.0 + abs(mu0))
        hi = max(1.0, lam + aspect * spectrum.r_max)
        while f(hi) < 0.0:
            hi *= 2.0
            if hi > 1e300:
                raise SolverFailureError("penalty equation bracket expansion diverged")
        if f(lo) >= 0.0:
            # Root pinched against the edge by the lo-guard; the guard itself
            # is the best representable answer.
            mu = lo
        else:
            mu = _solve_monotone(f, fprime, lo, hi, increasing=True)

    residual = abs(mu - lam - aspect * float(np.mean(mu * r / (r + mu))))
    if residual > 1e-10 * (1.0 + abs(lam) + abs(mu)):
        raise SolverFailureError(
            f"penalty equation residual {residual:.3e} at lam={lam}, aspect={aspect}"
        )
    return FixedPointSolution(
        lam=lam,
        phi=aspect,
        psi=aspect,
        mu=float(mu),
        v=math.inf if mu == 0.0 else 1.0 / float(mu),
        residual=float(residual),
    )


def solve_mu_grid(spectrum: Spectrum, lams: np.ndarray, aspect: float) -> np.ndarray:
    """Vectorized bisection for mu over an array of admissible penalties.

    All penalties must satisfy lam > lambda_min(aspect); used by grid scans
    where per-element Newton bookkeeping is not worth it.
    """
    _check_phi(aspect)
    lams = np.asarray(lams, dtype=float)
    r = spectrum.eigenvalues
    mu0 = mu_zero(spectrum, aspect)
    lmin = lambda_of_mu(spectrum, mu0, aspect)
    if np.any(lams <= lmin):
        raise BelowMinimumPenaltyError("grid contains penalties at or below the minimum")

    def f(mus: np.ndarray) -> np.ndarray:
        return mus * (1.0 - aspect * np.mean(r[None, :] / (r[None, :] + mus[:, None]), axis=1)) - lams

    lo = np.full(lams.shape, mu0 + _EDGE_EPS * (1.0 + abs(mu0)))
    hi = np.maximum(1.0, lams + aspect * spectrum.r_max)
    bad = f(hi) < 0.0
    while np.any(bad):
        hi[bad] *= 2.0
        bad = f(hi) < 0.0
    # lo may already sit past the root for penalties within the edge guard
    lo = np.minimum(lo, hi)
    for _ in range(110):
        mid = 0.5 * (lo + hi)
        neg = f(mid) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def tilde_v(model: ShiftModel, mu: float, phi: float, psi: float | None = None) -> float:
    """Variance-scale companion of the fixed point:

        tv = phi * tr[S0 S (S+mu I)^-2] / p  /  (1 - phi * tr[S^2 (S+mu I)^-2] / p)

    ``mu`` must be the level solved at aspect ``psi`` (psi = phi for plain
    ridge); the denominator is positive on that branch and a nonpositive
    value signals a level below the branch edge.
    """
    _check_phi(phi)
    if psi is None:
        psi = phi
    if psi != PSI_INFINITE and psi < phi - 1e-12:
        raise InvalidParameterError(f"subsample aspect {psi} must be >= data aspect {phi}")
    if math.isinf(mu):
        return 0.0
    denom = 1.0 - phi * model.spectrum.resolvent_trace(mu, power=2, sigma_power=2)
    if denom <= 0.0:
        raise BranchViolationError(
            f"nonpositive denominator {denom:.3e}: mu={mu} is below the branch edge"
        )
    return phi * model.sigma0_resolvent_trace(mu, power=2, sigma_power=1) / denom


@dataclass(frozen=True)
class EquivalencePath:
    """Segment of (penalty, subsample aspect) pairs sharing one value of mu.

    Endpoint theta=0 is the plain-ridge anchor (lambda_bar, phi); endpoint
    theta=1 is the minimum-penalty ensemble anchor (lambda_min(psi_bar),
    psi_bar). Every convex combination solves the penalty equation with the
    same mu_star.
    """

    lambda_bar: float
    psi_bar: float
    phi: float
    mu_star: float
    points: tuple[tuple[float, float, float], ...]


def equivalence_path(
    spectrum: Spectrum,
    phi: float,
    *,
    lambda_bar: float | None = None,
    psi_bar: float | None = None,
    samples: int = 33,
) -> EquivalencePath:
    """Resolve the contour of constant mu through one anchor.

    Exactly one of ``lambda_bar`` (plain-ridge penalty, > lambda_min(phi)) or
    ``psi_bar`` (ensemble aspect, >= phi) must be given; the other endpoint
    follows from matching mu between the two parameterizations.
    """
    _check_phi(phi)
    if samples < 2:
        raise InvalidParameterError("samples must be >= 2")
    if (lambda_bar is None) == (psi_bar is None):
        raise InvalidParameterError("give exactly one anchor: lambda_bar or psi_bar")

    if psi_bar is not None:
        if psi_bar < phi:
            raise InvalidParameterError(f"invalid anchor: psi_bar={psi_bar} below phi={phi}")
        mu_star = mu_zero(spectrum, psi_bar)
        lam_bar = lambda_of_mu(spectrum, mu_star, phi)
    else:
        try:
            mu_star = solve_mu(spectrum, lambda_bar, phi).mu
        except BelowMinimumPenaltyError as exc:
            raise InvalidParameterError(f"invalid anchor: {exc}") from exc
        # The ensemble endpoint has mu_star sitting exactly on its branch
        # edge, which fixes the aspect ratio in closed form.
        psi_bar = 1.0 / spectrum.resolvent_trace(mu_star, power=2, sigma_power=2)
        lam_bar = float(lambda_bar)
        if psi_bar < phi - 1e-9 * (1.0 + phi):
            raise InvalidParameterError(
                f"invalid anchor: resolved psi_bar={psi_bar} below phi={phi}"
            )
        psi_bar = max(psi_bar, phi)

    lam_end = lambda_of_mu(spectrum, mu_star, psi_bar)
    thetas = np.linspace(0.0, 1.0, samples)
    points = tuple(
        (float(t), float((1.0 - t) * lam_bar + t * lam_end), float((1.0 - t) * phi + t * psi_bar))
        for t in thetas
    )
    return EquivalencePath(
        lambda_bar=float(lam_bar),
        psi_bar=float(psi_bar),
        phi=float(phi),
        mu_star=float(mu_star),
        points=points,
    )
