"""Train/test distribution pairs expressed in the eigenbasis of the train covariance.

Everything downstream works in the basis where the train covariance is
diagonal. The test covariance is stored dense in that basis (its diagonal
cached, since most trace functionals only need the diagonal), and signal
vectors are stored as projection coefficients in the same basis.

Conventions for the scalar functionals:

- covariance-type traces are averaged, ``tr[A] / p``;
- signal-weighted forms are plain quadratic forms ``b' A b`` with no ``1/p``,
  so they sit on the same scale as the noise level ``sigma2`` (an isotropic
  random signal of energy ``alpha2`` has ``E[b' A b] = alpha2 * tr[A] / p``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InvalidParameterError, SingularResolventError

_PSD_RTOL = 1e-10
_IDENTITY_ATOL = 1e-12

TraceWeight = Literal["identity", "sigma0", "signal", "signal_cross", "sigma0_sandwich"]


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidParameterError(f"{name} must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of the train covariance, ascending and strictly positive."""

    eigenvalues: np.ndarray

    def __post_init__(self) -> None:
        vals = _as_float_vector(self.eigenvalues, "eigenvalues")
        if np.any(vals <= 0.0):
            raise InvalidParameterError("eigenvalues must be strictly positive")
        if np.any(np.diff(vals) < 0.0):
            raise InvalidParameterError("eigenvalues must be in ascending order")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def p(self) -> int:
        return self.eigenvalues.size

    @property
    def r_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def r_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def is_identity(self) -> bool:
        return bool(np.all(np.abs(self.eigenvalues - 1.0) <= _IDENTITY_ATOL))

    @classmethod
    def identity(cls, p: int) -> "Spectrum":
        if p < 1:
            raise InvalidParameterError("p must be >= 1")
        return cls(np.ones(p))

    @classmethod
    def from_values(cls, values) -> "Spectrum":
        return cls(np.sort(np.asarray(values, dtype=float)))

    def _check_shift(self, mu: float) -> None:
        if not np.isfinite(mu) or mu <= -self.r_min:
            raise SingularResolventError(
                f"resolvent shift mu={mu} is at or below -r_min={-self.r_min}"
            )

    def resolvent_trace(self, mu: float, power: int = 1, sigma_power: int = 1) -> float:
        """Averaged trace ``tr[S^a (S + mu I)^-power] / p`` of the diagonal train covariance."""
        self._check_shift(mu)
        r = self.eigenvalues
        return float(np.mean(r**sigma_power / (r + mu) ** power))

    def resolvent_trace_grid(self, mus: np.ndarray, power: int = 1, sigma_power: int = 1) -> np.ndarray:
        """Vectorized :meth:`resolvent_trace` over an array of admissible shifts."""
        mus = np.asarray(mus, dtype=float)
        r = self.eigenvalues
        return np.mean(r**sigma_power / (r[None, :] + mus[:, None]) ** power, axis=1)


def build_ar1(p: int, rho: float) -> tuple[Spectrum, np.ndarray]:
    """Eigendecompose the banded correlation matrix with entries rho**|i-j|.

    Returns the ascending spectrum and the matching orthonormal eigenvector
    matrix (columns ordered like the eigenvalues).
    """
    if p < 2:
        raise InvalidParameterError("p must be >= 2")
    if not (0.0 < rho < 1.0):
        raise InvalidParameterError("rho must lie strictly inside (0, 1)")
    idx = np.arange(p)
    mat = rho ** np.abs(idx[:, None] - idx[None, :])
    eigenvalues, eigenvectors = np.linalg.eigh(mat)
    return Spectrum(eigenvalues), eigenvectors


@dataclass(frozen=True, eq=False)
class ShiftModel:
    """Joint train/test specification in the train eigenbasis.

    ``beta``/``beta0`` are None exactly when the signal is isotropic-random,
    in which case ``signal_alpha2`` holds the signal energy and all
    signal-weighted functionals are evaluated in expectation.
    """

    spectrum: Spectrum
    sigma0_matrix: np.ndarray
    beta: np.ndarray | None
    beta0: np.ndarray | None
    sigma2: float
    sigma0_sq: float
    signal_alpha2: float | None = None
    sigma0_diag: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        p = self.spectrum.p
        s0 = np.asarray(self.sigma0_matrix, dtype=float)
        if s0.shape != (p, p):
            raise InvalidParameterError(f"sigma0_matrix must be {p}x{p}, got {s0.shape}")
        scale = float(np.max(np.abs(s0))) or 1.0
        if np.max(np.abs(s0 - s0.T)) > 1e-8 * scale:
            raise InvalidParameterError("sigma0_matrix must be symmetric")
        s0 = 0.5 * (s0 + s0.T)
        eigs = np.linalg.eigvalsh(s0)
        if eigs[0] < -_PSD_RTOL * max(eigs[-1], 1e-300):
            raise InvalidParameterError(
                f"sigma0_matrix is not PSD up to round-off (min eig {eigs[0]:.3e})"
            )
        s0.setflags(write=False)
        object.__setattr__(self, "sigma0_matrix", s0)
        diag = np.ascontiguousarray(np.diag(s0))
        diag.setflags(write=False)
        object.__setattr__(self, "sigma0_diag", diag)

        if self.sigma2 < 0.0 or self.sigma0_sq < 0.0:
            raise InvalidParameterError("noise levels must be nonnegative")

        if self.signal_alpha2 is not None:
            if self.beta is not None or self.beta0 is not None:
                raise InvalidParameterError(
                    "isotropic-random signal excludes explicit beta/beta0"
                )
            if self.signal_alpha2 < 0.0:
                raise InvalidParameterError("signal_alpha2 must be nonnegative")
        else:
            if self.beta is None:
                raise InvalidParameterError("explicit signal requires beta")
            b = _as_float_vector(self.beta, "beta")
            if b.size != p:
                raise InvalidParameterError("beta dimension does not match spectrum")
            b = b.copy()
            b.setflags(write=False)
            object.__setattr__(self, "beta", b)
            b0 = b if self.beta0 is None else _as_float_vector(self.beta0, "beta0")
            if b0.size != p:
                raise InvalidParameterError("beta0 dimension does not match spectrum")
            b0 = b0.copy()
            b0.setflags(write=False)
            object.__setattr__(self, "beta0", b0)

    @property
    def p(self) -> int:
        return self.spectrum.p

    @property
    def is_isotropic_signal(self) -> bool:
        return self.signal_alpha2 is not None

    @property
    def alpha2(self) -> float:
        """Signal energy ||beta||^2 (its expectation for isotropic signals)."""
        if self.is_isotropic_signal:
            return float(self.signal_alpha2)
        return float(self.beta @ self.beta)

    @property
    def snr(self) -> float:
        if self.sigma2 == 0.0:
            return float("inf")
        return self.alpha2 / self.sigma2

    @property
    def has_covariate_shift(self) -> bool:
        r = self.spectrum.eigenvalues
        diff = self.sigma0_matrix - np.diag(r)
        return bool(np.max(np.abs(diff)) > 1e-12 * max(self.spectrum.r_max, 1.0))

    @property
    def has_regression_shift(self) -> bool:
        if self.is_isotropic_signal:
            return False
        scale = float(np.max(np.abs(self.beta))) or 1.0
        return bool(np.max(np.abs(self.beta0 - self.beta)) > 1e-12 * scale)

    def null_risk(self) -> float:
        """Risk of the zero predictor: beta0' S0 beta0 + sigma0_sq."""
        if self.is_isotropic_signal:
            return self.alpha2 * float(np.mean(self.sigma0_diag)) + self.sigma0_sq
        return float(self.beta0 @ self.sigma0_matrix @ self.beta0) + self.sigma0_sq

    # -- scalar functionals -------------------------------------------------

    def sigma0_resolvent_trace(self, mu: float, power: int = 1, sigma_power: int = 1) -> float:
        """Averaged trace ``tr[S0 S^a (S + mu I)^-power] / p`` using the cached diagonal."""
        self.spectrum._check_shift(mu)
        r = self.spectrum.eigenvalues
        return float(np.mean(self.sigma0_diag * r**sigma_power / (r + mu) ** power))

    def signal_form(
        self,
        mu: float,
        power: int = 1,
        sigma_power: int = 1,
        right: Literal["beta", "beta0", "shift"] = "beta",
    ) -> float:
        """Quadratic form ``beta' S^a (S + mu I)^-power x`` with diagonal middle weight.

        ``right`` selects x = beta, beta0, or (beta0 - beta). Isotropic
        signals are evaluated in expectation (where the cross terms with
        ``beta0 - beta`` vanish).
        """
        self.spectrum._check_shift(mu)
        r = self.spectrum.eigenvalues
        w = r**sigma_power / (r + mu) ** power
        if self.is_isotropic_signal:
            if right == "shift":
                return 0.0
            return float(self.signal_alpha2) * float(np.mean(w))
        x = {"beta": self.beta, "beta0": self.beta0, "shift": self.beta0 - self.beta}[right]
        return float(np.sum(self.beta * w * x))

    def signal_sigma0_form(
        self,
        mu: float,
        left_power: int = 1,
        right_power: int = 1,
        right: Literal["beta", "beta0", "shift"] = "beta",
    ) -> float:
        """Sandwich form ``beta' (S+mu I)^-lp  S0  (S+mu I)^-rp x`` with the dense test covariance."""
        self.spectrum._check_shift(mu)
        r = self.spectrum.eigenvalues
        if self.is_isotropic_signal:
            if right != "beta":
                raise InvalidParameterError("isotropic signal has no regression shift")
            # E[b' M b] = alpha2 tr[M] / p; only the diagonal of S0 contributes.
            return float(self.signal_alpha2) * float(
                np.mean(self.sigma0_diag / (r + mu) ** (left_power + right_power))
            )
        x = {"beta": self.beta, "beta0": self.beta0, "shift": self.beta0 - self.beta}[right]
        wl = self.beta / (r + mu) ** left_power
        wr = x / (r + mu) ** right_power
        return float(wl @ self.sigma0_matrix @ wr)


def avg_trace_resolvent(
    model: ShiftModel,
    weight: TraceWeight,
    mu: float,
    power: int,
    sigma_power: int = 1,
) -> float:
    """Scalar resolvent functionals of the model, selected by ``weight``.

    - ``identity``:        tr[S^a (S+mu I)^-power] / p
    - ``sigma0``:          tr[S0 S^a (S+mu I)^-power] / p   (diagonal, O(p))
    - ``signal``:          beta' S^a (S+mu I)^-power beta   (quadratic form)
    - ``signal_cross``:    beta' S^a (S+mu I)^-power beta0
    - ``sigma0_sandwich``: beta' (S+mu I)^-1 S0 (S+mu I)^-1 beta  (dense, O(p^2))

    Raises SingularResolventError when ``mu <= -r_min``.
    """
    if power < 1:
        raise InvalidParameterError("power must be a positive integer")
    if weight == "identity":
        return model.spectrum.resolvent_trace(mu, power, sigma_power)
    if weight == "sigma0":
        return model.sigma0_resolvent_trace(mu, power, sigma_power)
    if weight == "signal":
        return model.signal_form(mu, power, sigma_power, right="beta")
    if weight == "signal_cross":
        return model.signal_form(mu, power, sigma_power, right="beta0")
    if weight == "sigma0_sandwich":
        if power != 2:
            raise InvalidParameterError("sigma0_sandwich uses total resolvent power 2")
        return model.signal_sigma0_form(mu, 1, 1, right="beta")
    raise InvalidParameterError(f"unknown trace weight {weight!r}")


def make_model(
    spectrum: Spectrum,
    *,
    beta=None,
    beta0=None,
    sigma0=None,
    sigma2: float = 0.0,
    sigma0_sq: float = 0.0,
    alpha2: float | None = None,
) -> ShiftModel:
    """Convenience constructor. ``sigma0`` may be None (= train covariance),
    a vector (diagonal in the train eigenbasis), or a dense matrix."""
    if sigma0 is None:
        s0 = np.diag(spectrum.eigenvalues)
    else:
        s0 = np.asarray(sigma0, dtype=float)
        if s0.ndim == 1:
            s0 = np.diag(s0)
    return ShiftModel(
        spectrum=spectrum,
        sigma0_matrix=s0,
        beta=None if beta is None else np.asarray(beta, dtype=float),
        beta0=None if beta0 is None else np.asarray(beta0, dtype=float),
        sigma2=float(sigma2),
        sigma0_sq=float(sigma0_sq),
        signal_alpha2=None if alpha2 is None else float(alpha2),
    )


# -- configuration ----------------------------------------------------------

_SPECTRUM_KINDS = ("identity", "ar1", "explicit", "file")
_SIGNAL_KINDS = ("isotropic", "eigvec-combination", "explicit")
_SHIFT_KINDS = ("none", "covariate", "regression", "joint")
_SIGMA0_KINDS = ("identity", "ar1", "diagonal")
_BETA0_KINDS = ("scale", "explicit")


@dataclass(frozen=True)
class SpectrumSpec:
    kind: str
    rho: float | None = None
    values: tuple[float, ...] | None = None
    path: str | None = None


@dataclass(frozen=True)
class SignalSpec:
    kind: str
    alpha2: float | None = None
    indices: tuple[int, ...] | None = None
    weights: tuple[float, ...] | None = None
    values: tuple[float, ...] | None = None
    path: str | None = None
    basis: str = "sigma"


@dataclass(frozen=True)
class Sigma0Spec:
    kind: str
    rho: float | None = None
    values: tuple[float, ...] | None = None
    path: str | None = None


@dataclass(frozen=True)
class Beta0Spec:
    kind: str
    factor: float | None = None
    values: tuple[float, ...] | None = None
    path: str | None = None


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    sigma0: Sigma0Spec | None = None
    beta0: Beta0Spec | None = None


@dataclass(frozen=True)
class ModelConfig:
    """Structured model description parsed from a JSON document."""

    p: int
    spectrum: SpectrumSpec
    signal: SignalSpec
    shift: ShiftSpec
    sigma2: float
    sigma0_sq: float

    def __post_init__(self) -> None:
        if self.p < 2:
            raise InvalidParameterError("p must be >= 2")
        if self.spectrum.kind not in _SPECTRUM_KINDS:
            raise InvalidParameterError(f"unknown spectrum kind {self.spectrum.kind!r}")
        if self.spectrum.kind == "ar1" and not (
            self.spectrum.rho is not None and 0.0 < self.spectrum.rho < 1.0
        ):
            raise InvalidParameterError("ar1 spectrum needs rho in (0, 1)")
        if self.signal.kind not in _SIGNAL_KINDS:
            raise InvalidParameterError(f"unknown signal kind {self.signal.kind!r}")
        if self.signal.basis not in ("sigma", "sigma0"):
            raise InvalidParameterError("signal basis must be 'sigma' or 'sigma0'")
        if self.shift.kind not in _SHIFT_KINDS:
            raise InvalidParameterError(f"unknown shift kind {self.shift.kind!r}")
        if self.shift.kind in ("covariate", "joint") and self.shift.sigma0 is None:
            raise InvalidParameterError(f"{self.shift.kind} shift needs a sigma0 spec")
        if self.shift.kind in ("regression", "joint") and self.shift.beta0 is None:
            raise InvalidParameterError(f"{self.shift.kind} shift needs a beta0 spec")
        if self.sigma2 < 0.0 or self.sigma0_sq < 0.0:
            raise InvalidParameterError("noise levels must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        def tup(x):
            return None if x is None else tuple(x)

        try:
            spec = raw.get("spectrum", {})
            sig = raw.get("signal", {})
            shift = raw.get("shift", {"kind": "none"})
            s0raw = shift.get("sigma0")
            b0raw = shift.get("beta0")
            return cls(
                p=int(raw["p"]),
                spectrum=SpectrumSpec(
                    kind=spec.get("kind", "identity"),
                    rho=spec.get("rho"),
                    values=tup(spec.get("values")),
                    path=spec.get("path"),
                ),
                signal=SignalSpec(
                    kind=sig.get("kind", "isotropic"),
                    alpha2=sig.get("alpha2"),
                    indices=tup(sig.get("indices")),
                    weights=tup(sig.get("weights")),
                    values=tup(sig.get("values")),
                    path=sig.get("path"),
                    basis=sig.get("basis", "sigma"),
                ),
                shift=ShiftSpec(
                    kind=shift.get("kind", "none"),
                    sigma0=None
                    if s0raw is None
                    else Sigma0Spec(
                        kind=s0raw.get("kind", "identity"),
                        rho=s0raw.get("rho"),
                        values=tup(s0raw.get("values")),
                        path=s0raw.get("path"),
                    ),
                    beta0=None
                    if b0raw is None
                    else Beta0Spec(
                        kind=b0raw.get("kind", "scale"),
                        factor=b0raw.get("factor"),
                        values=tup(b0raw.get("values")),
                        path=b0raw.get("path"),
                    ),
                ),
                sigma2=float(raw.get("sigma2", 0.0)),
                sigma0_sq=float(raw.get("sigma0_sq", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed model config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _load_column(path: str) -> np.ndarray:
    # one value per line
    return np.loadtxt(path, dtype=float, ndmin=1)


def _spectrum_from_spec(spec: SpectrumSpec, p: int) -> tuple[Spectrum, np.ndarray | None]:
    """Returns the spectrum plus the eigenvector matrix when the train
    covariance is given in the standard basis (None means the standard basis
    already diagonalizes it)."""
    if spec.kind == "identity":
        return Spectrum.identity(p), None
    if spec.kind == "ar1":
        return build_ar1(p, float(spec.rho))
    if spec.kind == "explicit":
        if spec.values is None:
            raise InvalidParameterError("explicit spectrum needs values")
        vals = _as_float_vector(spec.values, "spectrum values")
        if vals.size != p:
            raise InvalidParameterError("spectrum values do not match p")
        return Spectrum.from_values(vals), None
    vals = _load_column(spec.path)
    if vals.size != p:
        raise InvalidParameterError("spectrum file does not match p")
    return Spectrum.from_values(vals), None


def _combination_vector(p: int, indices, weights) -> np.ndarray:
    if indices is None or weights is None or len(indices) != len(weights):
        raise InvalidParameterError("eigvec-combination needs matching indices and weights")
    beta = np.zeros(p)
    for one_based, w in zip(indices, weights):
        if not (1 <= int(one_based) <= p):
            raise InvalidParameterError(f"eigenvector index {one_based} outside 1..{p}")
        beta[int(one_based) - 1] += float(w)
    return beta


def build_model(config: ModelConfig) -> ShiftModel:
    """Realize a parsed configuration as a ShiftModel in the train eigenbasis.

    A test covariance given in the standard basis (kind ``ar1``) is rotated
    into the train eigenbasis as ``W' S0 W``. A signal specified as an
    eigenvector combination of the *test* covariance (``basis: sigma0``)
    requires an isotropic train covariance; the working basis is then the
    test eigenbasis.
    """
    p = config.p
    eigvecs: np.ndarray | None = None

    if config.signal.basis == "sigma0":
        # Work in the test covariance eigenbasis; valid only when the train
        # covariance is isotropic (it stays diagonal under any rotation).
        if config.spectrum.kind != "identity":
            raise InvalidParameterError(
                "signal basis 'sigma0' requires an identity train covariance"
            )
        if config.shift.sigma0 is None or config.shift.sigma0.kind != "ar1":
            raise InvalidParameterError("signal basis 'sigma0' needs an ar1 sigma0 spec")
        if config.signal.kind != "eigvec-combination":
            raise InvalidParameterError("signal basis 'sigma0' needs an eigvec-combination signal")
        if config.shift.beta0 is not None and config.shift.beta0.kind != "scale":
            raise InvalidParameterError("signal basis 'sigma0' supports only scaled beta0")
        spectrum = Spectrum.identity(p)
        s0_spectrum, _ = build_ar1(p, float(config.shift.sigma0.rho))
        sigma0 = np.diag(s0_spectrum.eigenvalues)
        beta = _combination_vector(p, config.signal.indices, config.signal.weights)
    else:
        spectrum, eigvecs = _spectrum_from_spec(config.spectrum, p)

        if config.signal.kind == "isotropic":
            beta = None
        elif config.signal.kind == "eigvec-combination":
            beta = _combination_vector(p, config.signal.indices, config.signal.weights)
        else:
            vals = (
                _load_column(config.signal.path)
                if config.signal.values is None
                else _as_float_vector(config.signal.values, "signal values")
            )
            if vals.size != p:
                raise InvalidParameterError("signal values do not match p")
            # explicit signals are given in the standard basis
            beta = vals if eigvecs is None else eigvecs.T @ vals

        if config.shift.kind in ("covariate", "joint"):
            s0spec = config.shift.sigma0
            if s0spec.kind == "identity":
                sigma0 = np.eye(p)
            elif s0spec.kind == "ar1":
                idx = np.arange(p)
                s0_std = float(s0spec.rho) ** np.abs(idx[:, None] - idx[None, :])
                sigma0 = s0_std if eigvecs is None else eigvecs.T @ s0_std @ eigvecs
            elif s0spec.kind == "diagonal":
                vals = (
                    _load_column(s0spec.path)
                    if s0spec.values is None
                    else _as_float_vector(s0spec.values, "sigma0 values")
                )
                if vals.size != p:
                    raise InvalidParameterError("sigma0 values do not match p")
                # diagonal entries are interpreted in the train eigenbasis
                sigma0 = np.diag(vals)
            else:
                raise InvalidParameterError(f"unknown sigma0 kind {s0spec.kind!r}")
        else:
            sigma0 = np.diag(spectrum.eigenvalues)

    beta0 = None
    if config.shift.kind in ("regression", "joint"):
        if beta is None:
            raise InvalidParameterError("regression shift needs an explicit signal")
        b0spec = config.shift.beta0
        if b0spec.kind == "scale":
            if b0spec.factor is None:
                raise InvalidParameterError("beta0 scale spec needs a factor")
            beta0 = float(b0spec.factor) * beta
        elif b0spec.kind == "explicit":
            vals = (
                _load_column(b0spec.path)
                if b0spec.values is None
                else _as_float_vector(b0spec.values, "beta0 values")
            )
            if vals.size != p:
                raise InvalidParameterError("beta0 values do not match p")
            beta0 = vals if eigvecs is None else eigvecs.T @ vals
        else:
            raise InvalidParameterError(f"unknown beta0 kind {b0spec.kind!r}")

    alpha2 = config.signal.alpha2 if config.signal.kind == "isotropic" else None
    if config.signal.kind == "isotropic" and alpha2 is None:
        raise InvalidParameterError("isotropic signal needs alpha2")

    return ShiftModel(
        spectrum=spectrum,
        sigma0_matrix=sigma0,
        beta=beta,
        beta0=beta0,
        sigma2=config.sigma2,
        sigma0_sq=config.sigma0_sq,
        signal_alpha2=alpha2,
    )
