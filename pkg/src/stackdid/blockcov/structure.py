"""Block-exchangeable correlation structure for person-time outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Mapping

import numpy as np

from ..errors import SizeGuardError, ValidationError


@dataclass(frozen=True)
class StateParams:
    """Correlation parameters of one unit.

    Attributes
    ----------
    rho : float
        Same person, different occasions.
    phi : float
        Different persons, same occasion.
    psi : float
        Different persons, different occasions.
    sigma2 : float
        Marginal variance of one observation.
    """

    rho: float
    phi: float
    psi: float
    sigma2: float = 1.0

    def __post_init__(self):
        vals = (self.rho, self.phi, self.psi, self.sigma2)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValidationError("correlation parameters must be finite")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")
        if not (self.rho >= self.phi >= self.psi):
            raise ValidationError(
                f"ordering rho >= phi >= psi violated: "
                f"({self.rho}, {self.phi}, {self.psi})")
        if self.sigma2 <= 0:
            raise ValidationError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def excess(self):
        """phi - psi, the within-occasion excess between persons."""
        return self.phi - self.psi

    def spectrum(self, n, t):
        """Distinct eigenvalues of the n*t block (with multiplicity > 0)."""
        return _spectrum(self.rho, self.phi, self.psi, self.sigma2, n, t)


def _spectrum(r, p, s, sigma2, n, t):
    base = 1.0 - r - p + s
    out = []
    if n >= 2 and t >= 2:
        out.append(base)
    if n >= 2:
        out.append(base + t * (r - s))
    if t >= 2:
        out.append(base + n * (p - s))
    out.append(base + t * (r - s) + n * (p - s) + n * t * s)
    return [sigma2 * v for v in out]


@dataclass(frozen=True)
class CorrelationStructure:
    """Per-unit correlation parameters with a shared default.

    Units without an override use ``default``. With no overrides the
    structure is homogeneous.
    """

    default: StateParams
    overrides: Mapping[str, StateParams] = field(default_factory=dict)

    @classmethod
    def homogeneous(cls, rho, phi, psi, sigma2=1.0):
        return cls(StateParams(rho, phi, psi, sigma2))

    @property
    def is_homogeneous(self):
        return not self.overrides

    def params(self, unit=None) -> StateParams:
        if unit is not None and unit in self.overrides:
            return self.overrides[unit]
        return self.default

    def scaled(self, c):
        """Same correlations with every sigma2 multiplied by ``c``."""
        def sc(p):
            return StateParams(p.rho, p.phi, p.psi, p.sigma2 * c)
        return CorrelationStructure(sc(self.default),
                                    {k: sc(v) for k, v in self.overrides.items()})

    def to_dict(self):
        d = {"rho": self.default.rho, "phi": self.default.phi,
             "psi": self.default.psi, "sigma2": self.default.sigma2}
        if self.overrides:
            d["units"] = {k: {"rho": v.rho, "phi": v.phi, "psi": v.psi,
                              "sigma2": v.sigma2}
                          for k, v in sorted(self.overrides.items())}
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            default = StateParams(float(d["rho"]), float(d["phi"]),
                                  float(d["psi"]), float(d.get("sigma2", 1.0)))
        except KeyError as exc:
            raise ValidationError(f"correlation document missing key {exc}") from None
        over = {}
        for unit, u in (d.get("units") or {}).items():
            merged = {"rho": default.rho, "phi": default.phi,
                      "psi": default.psi, "sigma2": default.sigma2, **u}
            over[unit] = StateParams(float(merged["rho"]), float(merged["phi"]),
                                     float(merged["psi"]), float(merged["sigma2"]))
        return cls(default, over)


@dataclass
class ValidationReport:
    ok: bool
    issues: list
    min_eigenvalue: dict  # unit label -> smallest eigenvalue found


def validate_structure(corr, max_n, max_t, tol=1e-12):
    """Check that every parameter set yields a PSD block up to (max_n, max_t).

    The eigenvalues of an exchangeable n*t block are affine in n and t, so
    the extremes over ``1..max_n`` x ``1..max_t`` occur at the corners; we
    evaluate the exact spectrum there.

    Parameters
    ----------
    corr : CorrelationStructure or mapping
        A mapping in the document layout (keys rho, phi, psi, sigma2 and
        optional ``units``) is checked without constructing the structure,
        so ordering and range problems come back as issues.
    max_n, max_t : int

    Returns
    -------
    ValidationReport
    """
    if max_n < 1 or max_t < 1:
        raise ValidationError("max_n and max_t must be >= 1")
    issues = []
    mins = {}
    for label, p in _raw_params(corr, issues):
        r, f, s, v = p
        if not (r >= f >= s):
            issues.append(f"{label}: ordering rho >= phi >= psi violated")
        if not 0.0 <= r < 1.0:
            issues.append(f"{label}: rho must lie in [0, 1)")
        if not v > 0:
            issues.append(f"{label}: sigma2 must be positive")
            continue
        lo = math.inf
        for n in {1, max_n}:
            for t in {1, max_t}:
                lo = min(lo, min(_spectrum(r, f, s, v, n, t)))
        mins[label] = lo
        if lo < -tol * v:
            issues.append(f"{label}: not positive semidefinite at n<={max_n}, "
                          f"t<={max_t} (min eigenvalue {lo:.3g})")
    return ValidationReport(not issues, issues, mins)


def _raw_params(corr, issues):
    if isinstance(corr, CorrelationStructure):
        items = [("*", corr.default)] + sorted(corr.overrides.items())
        return [(k, (p.rho, p.phi, p.psi, p.sigma2)) for k, p in items]
    out = []
    base = {"sigma2": 1.0}
    for label, d in [("*", corr)] + sorted((corr.get("units") or {}).items()):
        merged = {**base, **d}
        try:
            vals = tuple(float(merged[k]) for k in ("rho", "phi", "psi", "sigma2"))
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(f"{label}: unreadable parameter {exc}")
            continue
        if not all(math.isfinite(x) for x in vals):
            issues.append(f"{label}: parameters must be finite")
            continue
        if label == "*":
            base = dict(zip(("rho", "phi", "psi", "sigma2"), vals))
        out.append((label, vals))
    return out


def build_sigma(params, n, t, limit=10_000):
    """Dense covariance of ``n`` persons by ``t`` occasions in one unit.

    Rows are ordered person-major: index ``i * t + s``.

    Parameters
    ----------
    params : StateParams or CorrelationStructure
        A structure contributes its default parameters.
    n, t : int
    limit : int
        Largest ``n * t`` accepted; the result holds ``(n t)^2`` doubles.

    Returns
    -------
    ndarray of shape (n*t, n*t)
    """
    if isinstance(params, CorrelationStructure):
        params = params.default
    if n < 0 or t < 0:
        raise ValidationError("n and t must be nonnegative")
    if n * t > limit:
        raise SizeGuardError(f"n*t = {n * t} exceeds the dense limit {limit}")
    r, p, s = params.rho, params.phi, params.psi
    In, Jn = np.eye(n), np.ones((n, n))
    It, Jt = np.eye(t), np.ones((t, t))
    within = (1.0 - r - p + s) * It + (r - s) * Jt
    between = (p - s) * It + s * Jt
    return params.sigma2 * (np.kron(In, within) + np.kron(Jn, between))
