"""One-step maps and path simulation.

Every step consumes a Brownian increment ``xi ~ N(0, h)`` (not a standardised
normal), so coarsened noise grids can be fed straight in.  Step functions are
vectorised over ``x`` and ``xi``.
"""
from __future__ import annotations

import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .models import DomainError, Model, Unsupported, as_params, get_model
from .rng import NoiseGrid, Purpose, StreamKey, generator

__all__ = [
    "SchemeKind",
    "Trajectory",
    "PathAborted",
    "lt_step",
    "strang_step",
    "em_step",
    "milstein_step",
    "sd_step",
    "lamperti_em_step",
    "step",
    "simulate_path",
    "simulate_paths",
    "exact_transition_sample",
    "write_trajectories_csv",
]


class SchemeKind(str, enum.Enum):
    LT = "LT"
    STRANG = "Strang"
    EUM = "EuM"
    MILSTEIN = "Milstein"
    SEMI_DISCRETE = "SemiDiscrete"
    LAMPERTI_EUM = "LampertiEuM"
    EXACT = "Exact"

    @classmethod
    def parse(cls, s) -> "SchemeKind":
        if isinstance(s, cls):
            return s
        key = str(s).replace("-", "").replace("_", "").replace("+", "").lower()
        aliases = {"s": cls.STRANG, "sd": cls.SEMI_DISCRETE, "em": cls.EUM,
                   "euler": cls.EUM, "lampertiem": cls.LAMPERTI_EUM}
        if key in aliases:
            return aliases[key]
        for k in cls:
            if k.value.lower() == key:
                return k
        raise ValueError(f"unknown scheme {s!r}; known: {', '.join(k.value for k in cls)}")


class PathAborted(RuntimeError):
    def __init__(self, step_index: int, reason: str):
        super().__init__(f"path aborted at step {step_index}: {reason}")
        self.step_index = step_index
        self.reason = reason


def lt_step(model: Model, p, h, x, xi):
    return model.phi2(h, model.phi1(h, x, p), xi, p)


def strang_step(model: Model, p, h, x, xi):
    z = model.phi2(h, model.phi1(0.5 * h, x, p), xi, p)
    return model.phi1(0.5 * h, z, p)


def em_step(model: Model, p, h, x, xi):
    return x + model.f(x, p) * h + model.g(x, p) * xi


def milstein_step(model: Model, p, h, x, xi):
    # g g' = (g^2)'/2 avoids dividing by g at the boundary
    return em_step(model, p, h, x, xi) + 0.25 * model.g2_x(x, p) * (xi * xi - h)


def sd_step(model: Model, p, h, x, xi):
    z = x + model.f1(x, p) * h
    return model.phi2(h, z, xi, p)


def lamperti_em_step(model: Model, p, h, x, xi):
    y = model.v(x, p)
    b = model.f(x, p) / model.g(x, p) - 0.5 * model.g_x(x, p)
    return model.v_inv(y + b * h + xi, p)


_STEPS: dict[SchemeKind, Callable] = {
    SchemeKind.LT: lt_step,
    SchemeKind.STRANG: strang_step,
    SchemeKind.EUM: em_step,
    SchemeKind.MILSTEIN: milstein_step,
    SchemeKind.SEMI_DISCRETE: sd_step,
    SchemeKind.LAMPERTI_EUM: lamperti_em_step,
}


def step(scheme, model, p, h, x, xi):
    """One step of ``scheme``; ``Exact`` is not a step map (use the sampler)."""
    model = get_model(model)
    scheme = SchemeKind.parse(scheme)
    if scheme is SchemeKind.EXACT:
        raise Unsupported("the exact scheme has no deterministic step map")
    return _STEPS[scheme](model, as_params(model, p), h, x, xi)


def exact_transition_sample(model, p, t, x0, key: StreamKey, size=None):
    """Draw from the exact law of ``X_t | X_0 = x0`` using the stream of ``key``."""
    model = get_model(model)
    return model.exact_sample(t, x0, as_params(model, p), generator(key), size)


@dataclass
class Trajectory:
    model: str
    params: tuple
    t0: float
    h: float
    values: np.ndarray
    scheme: str = ""
    adaptive_flags: np.ndarray | None = None
    step_sizes: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        if self.step_sizes is not None:
            return self.t0 + np.concatenate([[0.0], np.cumsum(self.step_sizes)])
        return self.t0 + self.h * np.arange(len(self.values))

    @property
    def uniform_grid(self) -> bool:
        return self.adaptive_flags is None or not np.any(self.adaptive_flags)

    def subsample(self, every: int) -> np.ndarray:
        if not self.uniform_grid:
            raise ValueError("cannot subsample an adaptive (non-uniform) trajectory")
        return self.values[::every]


def _truncate(model, p, x):
    return model.state_space(p).clip(x)


def _at_lower_edge(model, p, x):
    return x <= model.state_space(p).lower


def _adaptive_lt(model, p, h, x, xi):
    if _at_lower_edge(model, p, x):
        # the ODE part pushes outwards from the edge; only the SDE part moves
        return model.phi2(h, x, xi, p), 0.0
    hs = model.adaptive_step("LT", h, x, p)
    return lt_step(model, p, hs, x, xi * math.sqrt(hs / h)), hs


def _adaptive_strang(model, p, h, x, xi):
    # both half-flows use h*/2 from the entry point; the exit half is cut
    # further only if the SDE output lies closer to zero than x did
    if _at_lower_edge(model, p, x):
        return model.phi2(h, x, xi, p), 0.0
    hs = model.adaptive_step("S", h, x, p)
    z = model.phi2(hs, model.phi1(0.5 * hs, x, p), xi * math.sqrt(hs / h), p)
    exit_h = min(0.5 * hs, model.adaptive_step("LT", 0.5 * hs, z, p)) if z > 0 else 0.0
    return model.phi1(exit_h, z, p), hs


def simulate_path(scheme, model, p, x0: float, grid: NoiseGrid, adaptive: bool = False,
                  truncate: bool = False, t0: float = 0.0) -> Trajectory:
    """Iterate one scheme along a noise grid.

    ``adaptive`` shortens steps for the CIR/F attainable-boundary regime (the
    noise of a shortened step is rescaled to its variance); ``truncate`` clips
    EuM/Milstein values to the closed state space.
    """
    model = get_model(model)
    scheme = SchemeKind.parse(scheme)
    p = as_params(model, p)
    h = grid.h
    n = grid.n_steps
    out = np.empty(n + 1)
    out[0] = x0
    flags = sizes = None
    if scheme is SchemeKind.EXACT:
        rng = generator(grid.key.with_purpose(Purpose.EXACT_SAMPLE))
        for k in range(n):
            out[k + 1] = model.exact_sample(h, out[k], p, rng)
        return Trajectory(model.name, p, t0, h, out, scheme.value)
    use_adaptive = adaptive and scheme in (SchemeKind.LT, SchemeKind.STRANG)
    if use_adaptive:
        flags = np.zeros(n, dtype=bool)
        sizes = np.full(n, h)
    fn = _STEPS[scheme]
    x = float(x0)
    for k in range(n):
        xi = grid.increments[k]
        try:
            if use_adaptive:
                if scheme is SchemeKind.LT:
                    x, hs = _adaptive_lt(model, p, h, x, xi)
                else:
                    x, hs = _adaptive_strang(model, p, h, x, xi)
                if hs < h:
                    flags[k] = True
                    # an edge step spends the full h in the SDE part
                    sizes[k] = hs if hs > 0 else h
            else:
                x = fn(model, p, h, x, xi)
        except DomainError as e:
            raise PathAborted(k, str(e)) from e
        if truncate:
            x = float(_truncate(model, p, x))
        if not math.isfinite(x):
            raise PathAborted(k, "non-finite value")
        out[k + 1] = x
    return Trajectory(model.name, p, t0, h, out, scheme.value, flags, sizes)


def simulate_paths(scheme, model, p, x0, increments: np.ndarray, h: float,
                   truncate: bool = False, keep: str = "all") -> np.ndarray:
    """Vectorised simulation of many paths on a common grid.

    ``increments`` has shape ``(n_paths, n_steps)``.  Returns the full value
    array ``(n_paths, n_steps + 1)`` or, with ``keep="last"``, the endpoints.
    A DomainError on any path raises PathAborted with the step index.
    """
    model = get_model(model)
    scheme = SchemeKind.parse(scheme)
    p = as_params(model, p)
    if scheme is SchemeKind.EXACT:
        raise Unsupported("use exact_transition_sample for the exact scheme")
    fn = _STEPS[scheme]
    increments = np.asarray(increments, dtype=float)
    m, n = increments.shape
    x = np.broadcast_to(np.asarray(x0, dtype=float), (m,)).copy()
    out = None
    if keep == "all":
        out = np.empty((m, n + 1))
        out[:, 0] = x
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for k in range(n):
            try:
                x = fn(model, p, h, x, increments[:, k])
            except DomainError as e:
                raise PathAborted(k, str(e)) from e
            if truncate:
                x = _truncate(model, p, x)
            if out is not None:
                out[:, k + 1] = x
    return out if out is not None else x


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectories_csv(target, trajectories: Iterable[Trajectory]) -> None:
    """``path_id,t,x`` rows with 17 significant digits.

    ``target`` is a path or a text stream.
    """
    buf = io.StringIO()
    buf.write("path_id,t,x\n")
    for pid, tr in enumerate(trajectories):
        for t, x in zip(tr.times, tr.values):
            buf.write(f"{pid},{_fmt(t)},{_fmt(x)}\n")
    if hasattr(target, "write"):
        target.write(buf.getvalue())
    else:
        with open(os.fspath(target), "w", newline="") as fh:
            fh.write(buf.getvalue())
