"""Negative (pseudo-)log-likelihoods and one-step transition densities.

Each estimator is built from a per-pair term ``ell(x_prev, x_next)``.  The
monotone LT and Strang objectives and the Lamperti+EuM objective drop the
Gaussian constant ``log(2 pi h)/2`` per pair; the others keep full densities.
``nll_constant`` returns that per-pair offset ``c(h)`` so that

    nll == sum(-log density) + N * c(h).

NLL functions never raise on bad parameters or data: they return
``NllValue(inf, ..., reason)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .models import DomainError, InverseUndefined, Model, Unsupported, as_params, get_model

__all__ = [
    "EstimatorKind",
    "InvalidReason",
    "NllValue",
    "ObservationSet",
    "nll",
    "nll_constant",
    "log_transition_density",
    "transition_density",
    "lt_nll",
    "strang_nll",
    "lt_branching_nll",
    "strang_branching_nll",
    "kessler_nll",
    "kessler_moments",
    "em_nll",
    "lamperti_em_nll",
    "true_nll",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class EstimatorKind(str, enum.Enum):
    LT = "LT"
    STRANG = "Strang"
    KESSLER = "Kessler"
    EUM = "EuM"
    LAMPERTI_EUM = "LampertiEuM"
    TRUE_MLE = "TrueMLE"
    HERMITE = "Hermite"

    @classmethod
    def parse(cls, s) -> "EstimatorKind":
        if isinstance(s, cls):
            return s
        key = str(s).replace("-", "").replace("_", "").replace("+", "").lower()
        aliases = {"s": cls.STRANG, "em": cls.EUM, "true": cls.TRUE_MLE, "mle": cls.TRUE_MLE,
                   "exact": cls.TRUE_MLE, "lampertiem": cls.LAMPERTI_EUM}
        if key in aliases:
            return aliases[key]
        for k in cls:
            if k.value.lower() == key:
                return k
        raise ValueError(f"unknown estimator {s!r}; known: {', '.join(k.value for k in cls)}")


class InvalidReason(str, enum.Enum):
    PARAMS_INVALID = "params-invalid"
    DOMAIN_VIOLATION = "domain-violation"
    INVERSE_UNDEFINED = "inverse-undefined"


@dataclass(frozen=True)
class NllValue:
    value: float
    n_terms: int
    invalid_reason: InvalidReason | None = None

    def __post_init__(self):
        if (self.invalid_reason is None) == (self.value == math.inf):
            raise ValueError("NllValue is +inf exactly when an invalid reason is set")

    def __float__(self):
        return self.value

    @property
    def finite(self) -> bool:
        return self.invalid_reason is None


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observations ``x_0..x_N`` on the grid ``t0 + k h``.

    ``fixed`` maps parameter names to values held fixed during fitting.
    """

    model: str
    values: np.ndarray
    h: float
    t0: float = 0.0
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        m = get_model(self.model)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("need at least two observations (N >= 1)")
        if not self.h > 0:
            raise ValueError(f"h_obs must be positive, got {self.h}")
        unknown = set(self.fixed) - set(m.param_names)
        if unknown:
            raise KeyError(f"cannot fix unknown parameter(s) {sorted(unknown)} of {m.name}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "model", m.name)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.values.size)

    @property
    def fixed_mask(self) -> tuple:
        names = get_model(self.model).param_names
        return tuple(n in self.fixed for n in names)


def nll_constant(estimator, model, h: float) -> float:
    """Per-pair offset between the NLL and the summed -log density."""
    est = EstimatorKind.parse(estimator)
    model = get_model(model)
    if est in (EstimatorKind.LT, EstimatorKind.STRANG) and model.monotone_v_inverse:
        return -0.5 * math.log(2.0 * math.pi * h)
    if est is EstimatorKind.LAMPERTI_EUM:
        return -0.5 * math.log(2.0 * math.pi * h)
    return 0.0


# per-pair terms -------------------------------------------------------------
# each returns the array of NLL contributions under the module's convention

def _lt_mono_terms(model, p, h, x0, x1):
    m = model.v(model.phi1(h, x0, p), p) + model.shift(p) * h
    r = model.v(x1, p) - m
    return 0.5 * r * r / h + np.log(np.abs(model.g(x1, p)))


def _strang_mono_terms(model, p, h, x0, x1):
    z, dz = model.phi1_inv_and_dx(0.5 * h, x1, p)
    m = model.v(model.phi1(0.5 * h, x0, p), p) + model.shift(p) * h
    r = model.v(z, p) - m
    return 0.5 * r * r / h + np.log(np.abs(model.g(z, p))) - np.log(np.abs(dz))


def _branch_terms(model, p, h, m, z):
    """-log of the branch-sum density of ``v_inv(N(m, h))`` at ``z``."""
    sd = math.sqrt(h)
    ys = model.preimages(z, p, m, sd)
    q = -0.5 * (ys - m) ** 2 / h
    q = np.where(np.isnan(q), -np.inf, q)
    with np.errstate(divide="ignore"):
        return -logsumexp(q, axis=0) + _HALF_LOG_2PI + 0.5 * math.log(h) + np.log(model.g(z, p))


def _lt_branch_terms(model, p, h, x0, x1):
    m = model.v(model.phi1(h, x0, p), p) + model.shift(p) * h
    return _branch_terms(model, p, h, np.broadcast_to(m, np.shape(x1)), np.asarray(x1, float))


def _strang_branch_terms(model, p, h, x0, x1):
    z, dz = model.phi1_inv_and_dx(0.5 * h, x1, p)
    m = model.v(model.phi1(0.5 * h, x0, p), p) + model.shift(p) * h
    return (_branch_terms(model, p, h, np.broadcast_to(m, np.shape(z)), np.asarray(z, float))
            - np.log(np.abs(dz)))


def kessler_moments(model, p, h, x, exact: bool = True):
    """Conditional mean and variance used by the Kessler estimator.

    With ``exact`` the model's closed forms are used where available (OU,
    CIR); otherwise the second-order generator expansion.
    """
    model = get_model(model)
    p = as_params(model, p)
    x = np.asarray(x, dtype=float)
    if exact:
        try:
            return model.exact_mean(h, x, p), model.exact_var(h, x, p)
        except Unsupported:
            pass
    f, fx, fxx = model.f(x, p), model.f_x(x, p), model.f_xx(x, p)
    g2, g2x, g2xx = model.g2(x, p), model.g2_x(x, p), model.g2_xx(x, p)
    mean = x + h * f + 0.5 * h * h * (f * fx + 0.5 * g2 * fxx)
    var = h * g2 + h * h * (0.5 * f * g2x + g2 * fx + 0.25 * g2 * g2xx)
    return mean, var


def _gauss_terms(x1, mean, var):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * (x1 - mean) ** 2 / var + 0.5 * np.log(var) + _HALF_LOG_2PI
    return np.where(var > 0, out, np.inf)


def _kessler_terms(model, p, h, x0, x1, exact=True):
    mean, var = kessler_moments(model, p, h, x0, exact)
    return _gauss_terms(np.asarray(x1), mean, var)


def _em_terms(model, p, h, x0, x1):
    x0 = np.asarray(x0)
    return _gauss_terms(np.asarray(x1), x0 + model.f(x0, p) * h, model.g2(x0, p) * h)


def _lamperti_em_terms(model, p, h, x0, x1):
    x0 = np.asarray(x0)
    b = model.f(x0, p) / model.g(x0, p) - 0.5 * model.g_x(x0, p)
    r = model.v(x1, p) - model.v(x0, p) - b * h
    return 0.5 * r * r / h + np.log(np.abs(model.g(x1, p)))


def _true_terms(model, p, h, x0, x1):
    return -model.exact_logpdf(h, x0, x1, p)


def _terms_fn(estimator: EstimatorKind, model: Model, kessler_exact: bool = True):
    if estimator is EstimatorKind.LT:
        return _lt_mono_terms if model.monotone_v_inverse else _lt_branch_terms
    if estimator is EstimatorKind.STRANG:
        return _strang_mono_terms if model.monotone_v_inverse else _strang_branch_terms
    if estimator is EstimatorKind.KESSLER:
        return lambda m, p, h, a, b: _kessler_terms(m, p, h, a, b, kessler_exact)
    if estimator is EstimatorKind.EUM:
        return _em_terms
    if estimator is EstimatorKind.LAMPERTI_EUM:
        return _lamperti_em_terms
    if estimator is EstimatorKind.TRUE_MLE:
        if not model.has_exact:
            raise Unsupported(f"no exact transition density for {model.name}")
        return _true_terms
    raise Unsupported(f"estimator {estimator.value} is not implemented")


def nll(estimator, model, p, obs: ObservationSet, kessler_exact: bool = True) -> NllValue:
    """Negative (pseudo-)log-likelihood of ``obs`` under ``estimator``.

    ``p`` is the full parameter vector in model order.
    """
    est = EstimatorKind.parse(estimator)
    model = get_model(model)
    fn = _terms_fn(est, model, kessler_exact)
    n = obs.n
    try:
        p = as_params(model, p)
        ok = all(math.isfinite(v) for v in p) and model.is_valid(p)
    except (ValueError, TypeError, KeyError):
        ok = False
    if not ok:
        return NllValue(math.inf, n, InvalidReason.PARAMS_INVALID)
    x = obs.values
    try:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            terms = fn(model, p, obs.h, x[:-1], x[1:])
    except InverseUndefined:
        return NllValue(math.inf, n, InvalidReason.INVERSE_UNDEFINED)
    except (DomainError, ZeroDivisionError, OverflowError):
        return NllValue(math.inf, n, InvalidReason.DOMAIN_VIOLATION)
    # pairwise summation (numpy) keeps the result deterministic
    total = float(np.sum(terms))
    if not math.isfinite(total):
        return NllValue(math.inf, n, InvalidReason.DOMAIN_VIOLATION)
    return NllValue(total, n)


def lt_nll(model, p, obs):
    return nll(EstimatorKind.LT, model, p, obs)


def strang_nll(model, p, obs):
    return nll(EstimatorKind.STRANG, model, p, obs)


def lt_branching_nll(model, p, obs):
    model = get_model(model)
    if model.monotone_v_inverse:
        raise Unsupported(f"{model.name} has a monotone v inverse; use lt_nll")
    return nll(EstimatorKind.LT, model, p, obs)


def strang_branching_nll(model, p, obs):
    model = get_model(model)
    if model.monotone_v_inverse:
        raise Unsupported(f"{model.name} has a monotone v inverse; use strang_nll")
    return nll(EstimatorKind.STRANG, model, p, obs)


def kessler_nll(model, p, obs, exact: bool = True):
    return nll(EstimatorKind.KESSLER, model, p, obs, kessler_exact=exact)


def em_nll(model, p, obs):
    return nll(EstimatorKind.EUM, model, p, obs)


def lamperti_em_nll(model, p, obs):
    return nll(EstimatorKind.LAMPERTI_EUM, model, p, obs)


def true_nll(model, p, obs):
    return nll(EstimatorKind.TRUE_MLE, model, p, obs)


def log_transition_density(model, p, estimator, h, x0, y, kessler_exact: bool = True):
    """Log of the one-step density ``y | x0``; ``-inf`` where it vanishes."""
    est = EstimatorKind.parse(estimator)
    model = get_model(model)
    p = as_params(model, p)
    fn = _terms_fn(est, model, kessler_exact)
    c = nll_constant(est, model, h)
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)

    def one(yy):
        try:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                return c - fn(model, p, h, x0, yy)
        except DomainError:
            return np.full(np.shape(yy), -np.inf)

    # try the whole vector, then fall back to points when some are out of domain
    try:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = c - fn(model, p, h, x0, y)
    except DomainError:
        out = np.array([float(np.squeeze(one(np.array([v])))) for v in y])
    out = np.where(np.isnan(out), -np.inf, out)
    return float(out[0]) if scalar else out


def transition_density(model, p, estimator, h, x0, y, kessler_exact: bool = True):
    """One-step density of the estimator's transition model (non-negative)."""
    est = EstimatorKind.parse(estimator)
    if est is EstimatorKind.HERMITE:
        raise Unsupported("the Hermite estimator is not implemented")
    return np.exp(log_transition_density(model, p, est, h, x0, y, kessler_exact))
