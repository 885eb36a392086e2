"""Scalar SDE models ``dX = f(X) dt + g(X) dW`` with their splitting ingredients.

Each model carries the closed forms needed by the splitting schemes:

* ``f1 = f - f2`` with ``f2 = shift * g + g g' / 2``; the ODE ``x' = f1(x)``
  has the explicit flow ``phi1(h, x)``;
* the Lamperti map ``v = int 1/g`` and its inverse, so that the SDE
  ``dX = f2 dt + g dW`` is solved by ``phi2(h, x, xi) = v_inv(v(x) + shift*h + xi)``.

``shift`` is zero for every model except Ginzburg-Landau, whose cubic-ODE /
geometric-SDE decomposition puts a constant drift into the Lamperti space.

Parameters are plain float sequences ordered as ``Model.param_names``.
Formula methods accept scalars or numpy arrays for ``x``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "InverseUndefined",
    "Unsupported",
    "Boundary",
    "StateSpace",
    "ParamVector",
    "Model",
    "Pearson",
    "MODELS",
    "DEFAULT_PARAMS",
    "get_model",
]

_EDGE_TOL = 1e-12


class DomainError(ValueError):
    """A flow or transform was evaluated outside the model's state space."""


class InverseUndefined(DomainError):
    """The inverse ODE flow was evaluated outside the image of the flow."""


class Unsupported(NotImplementedError):
    """The model does not provide the requested closed form."""


class Boundary(enum.Enum):
    ENTRANCE = "entrance"
    ATTAINABLE = "attainable"
    NATURAL = "natural"


@dataclass(frozen=True)
class StateSpace:
    lower: float
    upper: float
    lower_boundary: Boundary
    upper_boundary: Boundary
    flags: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("state space needs lower < upper")

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.lower - tol) & (x <= self.upper + tol)

    def interior(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x > self.lower) & (x < self.upper)

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class ParamVector:
    """Named parameter vector for one model.

    ``theta`` / ``sigma`` give the drift-only and diffusion blocks; a
    parameter that enters ``g`` belongs to the diffusion block even if it
    also appears in the drift.
    """

    model: str
    values: tuple

    def __post_init__(self):
        m = get_model(self.model)
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(m.param_names):
            raise ValueError(
                f"{self.model} expects {len(m.param_names)} parameters "
                f"({', '.join(m.param_names)}), got {len(vals)}"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dict(cls, model: str, d: dict) -> "ParamVector":
        m = get_model(model)
        unknown = set(d) - set(m.param_names)
        if unknown:
            raise KeyError(
                f"unknown parameter(s) {sorted(unknown)} for {model}; "
                f"valid: {', '.join(m.param_names)}"
            )
        missing = [n for n in m.param_names if n not in d]
        if missing:
            raise KeyError(f"missing parameter(s) {missing} for {model}")
        return cls(model, tuple(d[n] for n in m.param_names))

    def as_dict(self) -> dict:
        return dict(zip(get_model(self.model).param_names, self.values))

    def __getitem__(self, name: str) -> float:
        return self.as_dict()[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    @property
    def theta(self) -> tuple:
        m = get_model(self.model)
        return tuple(v for n, v in zip(m.param_names, self.values) if n not in m.diffusion_params)

    @property
    def sigma(self) -> tuple:
        m = get_model(self.model)
        return tuple(v for n, v in zip(m.param_names, self.values) if n in m.diffusion_params)

    def replace(self, **kw) -> "ParamVector":
        d = self.as_dict()
        d.update(kw)
        return ParamVector.from_dict(self.model, d)


def _check(ok, msg, exc=None):
    if not np.all(ok):
        raise (exc or DomainError)(msg)


def _logistic_flow(h, x, A, B):
    """Flow of ``x' = A x - B x^2``."""
    e = math.expm1(A * h)
    return A * (e + 1.0) * x / (A + B * x * e)


def _logistic_inverse(h, x, A, B):
    e = math.expm1(A * h)
    den = A * (e + 1.0) - B * x * e
    _check(den > 0, "inverse ODE flow undefined: point outside the flow image",
           InverseUndefined)
    return A * x / den, A * A * (e + 1.0) / den ** 2


class Model:
    """Base class; subclasses fill in the formula sheet."""

    name: str = ""
    param_names: tuple = ()
    diffusion_params: frozenset = frozenset()
    #: whether ``v_inv`` is one-to-one on the reals (single-branch densities)
    monotone_v_inverse: bool = True
    has_exact: bool = False

    def __repr__(self):
        return f"<model {self.name}({', '.join(self.param_names)})>"

    # validity and state space -------------------------------------------------
    def is_valid(self, p) -> bool:
        raise NotImplementedError

    def state_space(self, p) -> StateSpace:
        raise NotImplementedError

    def params(self, *values, **named) -> ParamVector:
        if named:
            return ParamVector.from_dict(self.name, named)
        return ParamVector(self.name, values)

    # coefficients -------------------------------------------------------------
    def f(self, x, p):
        raise NotImplementedError

    def f_x(self, x, p):
        raise NotImplementedError

    def f_xx(self, x, p):
        raise NotImplementedError

    def g(self, x, p):
        raise NotImplementedError

    def g_x(self, x, p):
        raise NotImplementedError

    def g2(self, x, p):
        return self.g(x, p) ** 2

    def g2_x(self, x, p):
        return 2.0 * self.g(x, p) * self.g_x(x, p)

    def g2_xx(self, x, p):
        raise NotImplementedError

    def shift(self, p) -> float:
        return 0.0

    def f2(self, x, p):
        return self.shift(p) * self.g(x, p) + 0.5 * self.g(x, p) * self.g_x(x, p)

    def f1(self, x, p):
        return self.f(x, p) - self.f2(x, p)

    # flows --------------------------------------------------------------------
    def phi1(self, h, x, p):
        raise NotImplementedError

    def phi1_inv(self, h, x, p):
        raise Unsupported(f"{self.name}: no inverse ODE flow")

    def phi1_inv_dx(self, h, x, p):
        raise Unsupported(f"{self.name}: no inverse ODE flow")

    def phi1_inv_and_dx(self, h, x, p):
        return self.phi1_inv(h, x, p), self.phi1_inv_dx(h, x, p)

    def v(self, x, p):
        raise NotImplementedError

    def v_inv(self, y, p):
        raise NotImplementedError

    def v_image(self, p) -> tuple:
        ss = self.state_space(p)
        return float(self.v(ss.lower, p)), float(self.v(ss.upper, p))

    def preimages(self, x, p, mean, sd) -> np.ndarray:
        """All ``y`` with ``v_inv(y) = x`` that carry Gaussian weight around ``mean``.

        Returns an array of shape ``(n_branches, len(x))``; absent branches are NaN.
        """
        return np.atleast_2d(self.v(x, p))

    def phi2(self, h, x, xi, p):
        return self.v_inv(xi + self.shift(p) * h + self.v(x, p), p)

    def lamperti_drift(self, y, p):
        lo, hi = self.v_image(p)
        _check((np.asarray(y) >= lo) & (np.asarray(y) <= hi),
               f"{self.name}: y outside the Lamperti image of the state space")
        x = self.v_inv(y, p)
        return self.f(x, p) / self.g(x, p) - 0.5 * self.g_x(x, p)

    # closed-form moments ------------------------------------------------------
    def step_mean(self, scheme: str, h, x, p):
        """Exact conditional mean of one LT or Strang step ("LT" / "S")."""
        raise Unsupported(f"{self.name}: no closed-form one-step scheme mean")

    def exact_mean(self, t, x, p):
        raise Unsupported(f"{self.name}: no closed-form conditional mean")

    def exact_var(self, t, x, p):
        raise Unsupported(f"{self.name}: no closed-form conditional variance")

    def exact_sample(self, t, x0, p, rng: np.random.Generator, size=None):
        raise Unsupported(f"{self.name}: no exact transition sampler")

    def exact_logpdf(self, t, x0, y, p):
        raise Unsupported(f"{self.name}: no exact transition density")

    def adaptive_step(self, scheme: str, h, x, p):
        return h

    # helpers ------------------------------------------------------------------
    def _require_space(self, x, p, what):
        ss = self.state_space(p)
        _check(ss.contains(x, _EDGE_TOL), f"{self.name}: {what} outside state space "
                                         f"[{ss.lower}, {ss.upper}]")


def _log_iv(q, z):
    """``log I_q(z)``; the power series takes over where ``ive`` underflows."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(special.ive(q, z)) + z
        bad = ~np.isfinite(out) & (z >= 0)
        if np.any(bad):
            zb = z[bad] if out.ndim else z
            small = (q * np.log(0.5 * zb) - special.gammaln(q + 1.0)
                     + np.log(special.hyp0f1(q + 1.0, 0.25 * zb * zb)))
            if out.ndim:
                out[bad] = small
            else:
                out = small
    return out


class Pearson(Model):
    """``dX = -theta (X - mu) dt + sqrt(2 theta (a X^2 + b X + c)) dW``.

    For this family ``g g'/2 = theta (a x + b/2)`` and the ODE part is linear
    with rate ``theta (1 + a)`` and centre ``(mu - b/2) / (1 + a)``.
    """

    def coeffs(self, p) -> tuple:
        """``(theta, mu, a, b, c)``."""
        raise NotImplementedError

    def tilde(self, p) -> tuple:
        th, mu, a, b, _ = self.coeffs(p)
        return th * (1.0 + a), (mu - 0.5 * b) / (1.0 + a)

    def f(self, x, p):
        th, mu, *_ = self.coeffs(p)
        return -th * (np.asarray(x) - mu)

    def f_x(self, x, p):
        return np.full_like(np.asarray(x, dtype=float), -self.coeffs(p)[0])

    def f_xx(self, x, p):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g2(self, x, p):
        th, _, a, b, c = self.coeffs(p)
        x = np.asarray(x)
        return 2.0 * th * ((a * x + b) * x + c)

    def g2_x(self, x, p):
        th, _, a, b, _ = self.coeffs(p)
        return 2.0 * th * (2.0 * a * np.asarray(x) + b)

    def g2_xx(self, x, p):
        th, _, a, *_ = self.coeffs(p)
        return np.full_like(np.asarray(x, dtype=float), 4.0 * th * a)

    def g(self, x, p):
        return np.sqrt(np.maximum(self.g2(x, p), 0.0))

    def g_x(self, x, p):
        th, _, a, b, _ = self.coeffs(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            return th * (2.0 * a * np.asarray(x) + b) / self.g(x, p)

    def f2(self, x, p):
        th, _, a, b, _ = self.coeffs(p)
        return th * (a * np.asarray(x) + 0.5 * b)

    def f1(self, x, p):
        tt, mt = self.tilde(p)
        return -tt * (np.asarray(x) - mt)

    def phi1(self, h, x, p):
        tt, mt = self.tilde(p)
        self._require_space(x, p, "ODE flow start")
        out = mt + math.exp(-tt * h) * (np.asarray(x) - mt)
        self._require_space(out, p, "ODE flow")
        return out

    def phi1_inv(self, h, x, p):
        tt, mt = self.tilde(p)
        out = mt + math.exp(tt * h) * (np.asarray(x) - mt)
        _check(self.state_space(p).contains(out, _EDGE_TOL),
               f"{self.name}: point outside the image of the ODE flow", InverseUndefined)
        return out

    def phi1_inv_dx(self, h, x, p):
        tt, _ = self.tilde(p)
        return np.full_like(np.asarray(x, dtype=float), math.exp(tt * h))

    def _sde_mean(self, h, z, p):
        # E[phi2_h(z)]: the SDE part has linear drift theta (a x + b/2)
        th, _, a, b, _ = self.coeffs(p)
        if a == 0.0:
            return z + 0.5 * th * b * h
        e = math.exp(th * a * h)
        return e * z + 0.5 * b / a * (e - 1.0)

    def step_mean(self, scheme, h, x, p):
        if scheme == "LT":
            return self._sde_mean(h, self.phi1(h, x, p), p)
        if scheme == "S":
            tt, mt = self.tilde(p)
            z = self._sde_mean(h, self.phi1(0.5 * h, x, p), p)
            return mt + math.exp(-0.5 * tt * h) * (z - mt)
        raise ValueError(f"scheme must be 'LT' or 'S', got {scheme!r}")

    def exact_mean(self, t, x, p):
        th, mu, *_ = self.coeffs(p)
        return mu + math.exp(-th * t) * (np.asarray(x) - mu)

    def adaptive_step(self, scheme, h, x, p):
        ss = self.state_space(p)
        if ss.lower != 0.0:
            return h
        tt, mt = self.tilde(p)
        x = np.asarray(x, dtype=float)
        _check(x > 0, f"{self.name}: adaptive step needs x > 0")
        if mt >= 0.0:
            return np.full_like(x, h) if x.ndim else h
        factor = {"LT": 1.0, "S": 2.0}[scheme]
        bound = -(factor / tt) * np.log(-mt / (x - mt))
        hs = np.minimum(h, bound)
        # nudge down until the ODE flow is non-negative despite rounding
        for _ in range(8):
            z = mt + np.exp(-tt * hs / factor) * (x - mt)
            bad = z < 0
            if not np.any(bad):
                break
            hs = np.where(bad, np.nextafter(hs, 0.0) * (1 - 1e-15), hs)
        return hs if x.ndim else float(hs)


class OU(Pearson):
    name = "ou"
    param_names = ("theta", "mu")
    diffusion_params = frozenset({"theta"})

    def coeffs(self, p):
        th, mu = p
        return th, mu, 0.0, 0.0, 1.0

    def is_valid(self, p):
        return p[0] > 0

    def state_space(self, p):
        return StateSpace(-np.inf, np.inf, Boundary.NATURAL, Boundary.NATURAL)

    def g(self, x, p):
        return np.full_like(np.asarray(x, dtype=float), math.sqrt(2.0 * p[0]))

    def g_x(self, x, p):
        return np.zeros_like(np.asarray(x, dtype=float))

    def phi1(self, h, x, p):
        th, mu = p
        return mu + math.exp(-th * h) * (np.asarray(x) - mu)

    def phi1_inv(self, h, x, p):
        th, mu = p
        return mu + math.exp(th * h) * (np.asarray(x) - mu)

    def v(self, x, p):
        return np.asarray(x) / math.sqrt(2.0 * p[0])

    def v_inv(self, y, p):
        return math.sqrt(2.0 * p[0]) * np.asarray(y)

    def v_image(self, p):
        return -np.inf, np.inf

    def exact_var(self, t, x, p):
        return np.full_like(np.asarray(x, dtype=float), -math.expm1(-2.0 * p[0] * t))

    def exact_sample(self, t, x0, p, rng, size=None):
        m = self.exact_mean(t, x0, p)
        return m + math.sqrt(-math.expm1(-2.0 * p[0] * t)) * rng.standard_normal(
            size if size is not None else np.shape(m))

    def exact_logpdf(self, t, x0, y, p):
        m = self.exact_mean(t, x0, p)
        var = -math.expm1(-2.0 * p[0] * t)
        return -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (np.asarray(y) - m) ** 2 / var

    has_exact = True


class CIR(Pearson):
    name = "cir"
    param_names = ("theta", "mu", "b")
    diffusion_params = frozenset({"theta", "b"})
    monotone_v_inverse = False
    has_exact = True

    def coeffs(self, p):
        th, mu, b = p
        return th, mu, 0.0, b, 0.0

    def is_valid(self, p):
        th, mu, b = p
        return th > 0 and mu > 0 and b > 0

    def state_space(self, p):
        lower = Boundary.ENTRANCE if p[1] >= p[2] else Boundary.ATTAINABLE
        return StateSpace(0.0, np.inf, lower, Boundary.NATURAL)

    def v(self, x, p):
        th, _, b = p
        x = np.asarray(x)
        _check(x >= -_EDGE_TOL, "cir: v undefined for x < 0")
        return np.sqrt(2.0 * np.maximum(x, 0.0) / (th * b))

    def v_inv(self, y, p):
        th, _, b = p
        return 0.5 * th * b * np.asarray(y) ** 2

    def v_image(self, p):
        return 0.0, np.inf

    def preimages(self, x, p, mean, sd):
        y = self.v(x, p)
        return np.stack([y, -y])

    def exact_var(self, t, x, p):
        th, mu, b = p
        e = math.exp(-th * t)
        return 2.0 * b * np.asarray(x) * (e - e * e) + mu * b * (1.0 - e) ** 2

    def ncx2_params(self, t, x0, p):
        """``(scale, dof, noncentrality)`` of the exact law ``X_t = scale * chi2'``."""
        th, mu, b = p
        om = -math.expm1(-th * t)
        scale = 0.5 * om * b
        return scale, 2.0 * mu / b, 2.0 * np.asarray(x0) * math.exp(-th * t) / (om * b)

    def exact_sample(self, t, x0, p, rng, size=None):
        scale, dof, nc = self.ncx2_params(t, x0, p)
        return scale * rng.noncentral_chisquare(dof, nc, size=size)

    def exact_logpdf(self, t, x0, y, p):
        th, mu, b = p
        om = -math.expm1(-th * t)
        c = 1.0 / (b * om)
        u = c * np.asarray(x0) * math.exp(-th * t)
        w = c * np.asarray(y)
        q = mu / b - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = 2.0 * np.sqrt(u * w)
            out = (math.log(c) - u - w + 0.5 * q * (np.log(w) - np.log(u))
                   + _log_iv(q, z))
        return np.where(np.asarray(y) > 0, out, -np.inf)


class Student(Pearson):
    name = "student"
    param_names = ("theta", "mu", "a")
    diffusion_params = frozenset({"theta", "a"})

    def coeffs(self, p):
        th, mu, a = p
        return th, mu, a, 0.0, a

    def is_valid(self, p):
        return p[0] > 0 and p[2] > 0

    def state_space(self, p):
        return StateSpace(-np.inf, np.inf, Boundary.NATURAL, Boundary.NATURAL)

    def phi1(self, h, x, p):
        tt, mt = self.tilde(p)
        return mt + math.exp(-tt * h) * (np.asarray(x) - mt)

    def v(self, x, p):
        th, _, a = p
        return np.arcsinh(x) / math.sqrt(2.0 * th * a)

    def v_inv(self, y, p):
        th, _, a = p
        return np.sinh(math.sqrt(2.0 * th * a) * np.asarray(y))

    def v_image(self, p):
        return -np.inf, np.inf


class IGBM(Pearson):
    name = "igbm"
    param_names = ("theta", "mu", "a")
    diffusion_params = frozenset({"theta", "a"})

    def coeffs(self, p):
        th, mu, a = p
        return th, mu, a, 0.0, 0.0

    def is_valid(self, p):
        return p[0] > 0 and p[2] > 0

    def state_space(self, p):
        lower = Boundary.ENTRANCE if p[1] > 0 else Boundary.ATTAINABLE
        return StateSpace(0.0, np.inf, lower, Boundary.NATURAL)

    def g(self, x, p):
        th, _, a = p
        return math.sqrt(2.0 * th * a) * np.asarray(x)

    def g_x(self, x, p):
        th, _, a = p
        return np.full_like(np.asarray(x, dtype=float), math.sqrt(2.0 * th * a))

    def v(self, x, p):
        th, _, a = p
        x = np.asarray(x)
        _check(x > 0, "igbm: v undefined for x <= 0")
        return np.log(x) / math.sqrt(2.0 * th * a)

    def v_inv(self, y, p):
        th, _, a = p
        return np.exp(math.sqrt(2.0 * th * a) * np.asarray(y))

    def v_image(self, p):
        return -np.inf, np.inf


class FDiffusion(Pearson):
    """F diffusion; ``flags`` keeps the ergodicity (mu >= a) and zero-entrance
    (mu >= 1) conditions separately."""

    name = "fdiff"
    param_names = ("theta", "mu", "a")
    diffusion_params = frozenset({"theta", "a"})
    monotone_v_inverse = False

    def coeffs(self, p):
        th, mu, a = p
        return th, mu, a, a, 0.0

    def is_valid(self, p):
        th, mu, a = p
        return th > 0 and mu > 0 and a > 0

    def state_space(self, p):
        _, mu, a = p
        flags = {"ergodic": mu >= a, "zero_entrance": mu >= 1.0,
                 "positivity_preserving": mu >= 0.5 * a}
        lower = Boundary.ENTRANCE if mu >= 1.0 else Boundary.ATTAINABLE
        return StateSpace(0.0, np.inf, lower, Boundary.NATURAL, flags)

    def v(self, x, p):
        # -2/k log(sqrt(1+x) - sqrt(x)) == 2/k asinh(sqrt(x)), free of cancellation
        th, _, a = p
        x = np.asarray(x)
        _check(x >= -_EDGE_TOL, "fdiff: v undefined for x < 0")
        return 2.0 * np.arcsinh(np.sqrt(np.maximum(x, 0.0))) / math.sqrt(2.0 * th * a)

    def v_inv(self, y, p):
        th, _, a = p
        return np.sinh(0.5 * math.sqrt(2.0 * th * a) * np.asarray(y)) ** 2

    def v_image(self, p):
        return 0.0, np.inf

    def preimages(self, x, p, mean, sd):
        y = self.v(x, p)
        return np.stack([y, -y])


class WrightFisher(Pearson):
    name = "wf"
    param_names = ("theta", "mu", "a")
    diffusion_params = frozenset({"theta", "a"})
    monotone_v_inverse = False
    #: branches further than this many sds from the mean carry < 1e-16 relative weight
    BRANCH_WINDOW = 8.6

    def coeffs(self, p):
        th, mu, a = p
        return th, mu, a, -a, 0.0

    def is_valid(self, p):
        th, mu, a = p
        return th > 0 and 0 < mu < 1 and -1 < a < 0

    def state_space(self, p):
        _, mu, a = p
        entrance = 0 < mu < 1 and min(mu, 1 - mu) >= -a
        bd = Boundary.ENTRANCE if entrance else Boundary.ATTAINABLE
        return StateSpace(0.0, 1.0, bd, bd)

    def _k(self, p):
        th, _, a = p
        return math.sqrt(-2.0 * a * th)

    def _asin_sqrt(self, x):
        x = np.asarray(x, dtype=float)
        _check((x >= -_EDGE_TOL) & (x <= 1.0 + _EDGE_TOL),
               "wf: arcsin(sqrt(x)) undefined outside [0, 1]")
        return np.arcsin(np.clip(np.sqrt(np.maximum(x, 0.0)), 0.0, 1.0))

    def v(self, x, p):
        return 2.0 * self._asin_sqrt(x) / self._k(p)

    def v_inv(self, y, p):
        return np.sin(0.5 * self._k(p) * np.asarray(y)) ** 2

    def v_image(self, p):
        return 0.0, math.pi / self._k(p)

    def preimages(self, x, p, mean, sd):
        # sin^2(k y / 2) = x  <=>  y = (2/k)(+-A + j pi)
        k = self._k(p)
        A = self._asin_sqrt(x)
        period = 2.0 * math.pi / k
        mean = np.broadcast_to(mean, np.shape(A))
        lo = (mean - self.BRANCH_WINDOW * sd) / period
        hi = (mean + self.BRANCH_WINDOW * sd) / period
        j0 = np.floor(lo) - 1.0
        n = int(np.max(np.ceil(hi) - j0)) + 2
        js = j0[None, :] + np.arange(n)[:, None]
        plus = (2.0 / k) * (A[None, :] + js * math.pi)
        minus = (2.0 / k) * (-A[None, :] + js * math.pi)
        ys = np.concatenate([plus, minus])
        # drop duplicates at A = 0 or A = pi/2 (the two families touch there)
        dup = np.concatenate([np.zeros_like(plus, dtype=bool),
                              np.isclose(minus, plus, rtol=0, atol=1e-14)
                              | np.isclose(minus, np.roll(plus, -1, axis=0), rtol=0, atol=1e-14)])
        keep = (np.abs(ys - mean[None, :]) <= self.BRANCH_WINDOW * sd) & ~dup
        # always keep the branch nearest the mean
        nearest = np.argmin(np.abs(ys - mean[None, :]), axis=0)
        keep[nearest, np.arange(ys.shape[1])] = True
        return np.where(keep, ys, np.nan)


class AhnGao(Model):
    """``dX = kappa (theta - X) X dt + sigma X^{3/2} dW``.

    ``1/X`` is a CIR process, which gives the exact transition law.  ``v_inv``
    is used on its principal branch ``y < 0``; the mirrored branch sits more
    than ``4/(sigma sqrt(x))`` away and is ignored by the likelihoods.
    """

    name = "ahngao"
    param_names = ("kappa", "theta", "sigma")
    diffusion_params = frozenset({"sigma"})
    has_exact = True

    def is_valid(self, p):
        return all(v > 0 for v in p)

    def state_space(self, p):
        return StateSpace(0.0, np.inf, Boundary.ENTRANCE, Boundary.NATURAL)

    def _AB(self, p):
        ka, th, s = p
        return ka * th, ka + 0.75 * s * s

    def f(self, x, p):
        ka, th, _ = p
        x = np.asarray(x)
        return ka * (th - x) * x

    def f_x(self, x, p):
        ka, th, _ = p
        return ka * th - 2.0 * ka * np.asarray(x)

    def f_xx(self, x, p):
        return np.full_like(np.asarray(x, dtype=float), -2.0 * p[0])

    def g(self, x, p):
        return p[2] * np.asarray(x) ** 1.5

    def g_x(self, x, p):
        return 1.5 * p[2] * np.sqrt(x)

    def g2(self, x, p):
        return p[2] ** 2 * np.asarray(x) ** 3

    def g2_x(self, x, p):
        return 3.0 * p[2] ** 2 * np.asarray(x) ** 2

    def g2_xx(self, x, p):
        return 6.0 * p[2] ** 2 * np.asarray(x)

    def f1(self, x, p):
        A, B = self._AB(p)
        x = np.asarray(x)
        return A * x - B * x * x

    def phi1(self, h, x, p):
        A, B = self._AB(p)
        return _logistic_flow(h, np.asarray(x), A, B)

    def phi1_inv(self, h, x, p):
        A, B = self._AB(p)
        return _logistic_inverse(h, np.asarray(x), A, B)[0]

    def phi1_inv_dx(self, h, x, p):
        A, B = self._AB(p)
        return _logistic_inverse(h, np.asarray(x), A, B)[1]

    def phi1_inv_and_dx(self, h, x, p):
        A, B = self._AB(p)
        return _logistic_inverse(h, np.asarray(x), A, B)

    def v(self, x, p):
        x = np.asarray(x)
        _check(x > 0, "ahngao: v undefined for x <= 0")
        return -2.0 / (p[2] * np.sqrt(x))

    def v_inv(self, y, p):
        return 4.0 / (p[2] ** 2 * np.asarray(y) ** 2)

    def v_image(self, p):
        return -np.inf, 0.0

    def reciprocal_cir(self, p) -> tuple:
        """CIR parameters ``(theta, mu, b)`` of ``1/X``."""
        ka, th, s = p
        return ka * th, (ka + s * s) / (ka * th), s * s / (2.0 * ka * th)

    def exact_sample(self, t, x0, p, rng, size=None):
        q = self.reciprocal_cir(p)
        return 1.0 / MODELS["cir"].exact_sample(t, 1.0 / np.asarray(x0), q, rng, size)

    def exact_logpdf(self, t, x0, y, p):
        y = np.asarray(y)
        q = self.reciprocal_cir(p)
        with np.errstate(divide="ignore"):
            return MODELS["cir"].exact_logpdf(t, 1.0 / np.asarray(x0), 1.0 / y, q) - 2.0 * np.log(y)


class _GeometricNoise(Model):
    """Shared pieces of the models with ``g = sigma x`` on ``(0, inf)``."""

    param_names = ("eta", "lam", "sigma")
    diffusion_params = frozenset({"sigma"})

    def is_valid(self, p):
        eta, lam, s = p
        return eta >= 0 and lam > 0 and s > 0

    def state_space(self, p):
        return StateSpace(0.0, np.inf, Boundary.ENTRANCE, Boundary.NATURAL)

    def g(self, x, p):
        return p[2] * np.asarray(x)

    def g_x(self, x, p):
        return np.full_like(np.asarray(x, dtype=float), p[2])

    def g2_xx(self, x, p):
        return np.full_like(np.asarray(x, dtype=float), 2.0 * p[2] ** 2)

    def v(self, x, p):
        x = np.asarray(x)
        _check(x > 0, f"{self.name}: v undefined for x <= 0")
        return np.log(x) / p[2]

    def v_inv(self, y, p):
        return np.exp(p[2] * np.asarray(y))

    def v_image(self, p):
        return -np.inf, np.inf


class GinzburgLandau(_GeometricNoise):
    """``dX = ((eta + sigma^2/2) X - lam X^3) dt + sigma X dW``.

    Split into the cubic ODE ``x' = -lam x^3`` and the geometric SDE
    ``dX = (eta + sigma^2/2) X dt + sigma X dW``.
    """

    name = "gl"

    def shift(self, p):
        eta, _, s = p
        return eta / s

    def f(self, x, p):
        eta, lam, s = p
        x = np.asarray(x)
        return (eta + 0.5 * s * s) * x - lam * x ** 3

    def f_x(self, x, p):
        eta, lam, s = p
        return eta + 0.5 * s * s - 3.0 * lam * np.asarray(x) ** 2

    def f_xx(self, x, p):
        return -6.0 * p[1] * np.asarray(x)

    def f1(self, x, p):
        return -p[1] * np.asarray(x) ** 3

    def phi1(self, h, x, p):
        x = np.asarray(x)
        return x / np.sqrt(2.0 * p[1] * h * x * x + 1.0)

    def phi1_inv_and_dx(self, h, x, p):
        x = np.asarray(x)
        d = 1.0 - 2.0 * p[1] * h * x * x
        _check(d > 0, "gl: inverse ODE flow undefined (1 - 2 lam h x^2 <= 0)", InverseUndefined)
        return x / np.sqrt(d), d ** -1.5

    def phi1_inv(self, h, x, p):
        return self.phi1_inv_and_dx(h, x, p)[0]

    def phi1_inv_dx(self, h, x, p):
        return self.phi1_inv_and_dx(h, x, p)[1]


class Verhulst(_GeometricNoise):
    """``dX = ((eta + sigma^2/2) X - lam X^2) dt + sigma X dW``."""

    name = "verhulst"

    def is_valid(self, p):
        return all(v > 0 for v in p)

    def f(self, x, p):
        eta, lam, s = p
        x = np.asarray(x)
        return (eta + 0.5 * s * s) * x - lam * x * x

    def f_x(self, x, p):
        eta, lam, s = p
        return eta + 0.5 * s * s - 2.0 * lam * np.asarray(x)

    def f_xx(self, x, p):
        return np.full_like(np.asarray(x, dtype=float), -2.0 * p[1])

    def f1(self, x, p):
        eta, lam, _ = p
        x = np.asarray(x)
        return eta * x - lam * x * x

    def phi1(self, h, x, p):
        return _logistic_flow(h, np.asarray(x), p[0], p[1])

    def phi1_inv_and_dx(self, h, x, p):
        return _logistic_inverse(h, np.asarray(x), p[0], p[1])

    def phi1_inv(self, h, x, p):
        return self.phi1_inv_and_dx(h, x, p)[0]

    def phi1_inv_dx(self, h, x, p):
        return self.phi1_inv_and_dx(h, x, p)[1]

    def step_mean(self, scheme, h, x, p):
        s = p[2]
        growth = math.exp(0.5 * s * s * h)
        if scheme == "LT":
            return self.phi1(h, x, p) * growth
        raise Unsupported("verhulst: only the LT one-step mean is closed form")


MODELS: dict[str, Model] = {
    m.name: m
    for m in (OU(), CIR(), Student(), IGBM(), FDiffusion(), WrightFisher(),
              AhnGao(), GinzburgLandau(), Verhulst())
}


#: reference parameter sets (used by the invariant suite and as CLI defaults)
DEFAULT_PARAMS: dict[str, tuple] = {
    "ou": (2.0, 1.0),
    "cir": (2.0, 6.0, 0.2),
    "student": (2.0, 10.0, 5.0),
    "igbm": (2.0, 1.0, 0.5),
    "fdiff": (2.0, 10.0, 2.0),
    "wf": (1.0, 0.5, -0.3),
    "ahngao": (0.2, 2.0, 0.5),
    "gl": (1.0, 1.0, 0.5),
    "verhulst": (1.0, 1.0, 0.5),
}


def get_model(name) -> Model:
    if isinstance(name, Model):
        return name
    try:
        return MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(MODELS)}") from None


def as_params(model: Model, p) -> tuple:
    """Plain tuple of floats from a ParamVector, mapping or sequence."""
    if isinstance(p, ParamVector):
        return p.values
    if isinstance(p, dict):
        return ParamVector.from_dict(model.name, p).values
    return tuple(float(v) for v in p)
