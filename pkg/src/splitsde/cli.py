"""Command-line front end: ``splitsde {simulate,converge,infer,wasserstein,check}``.

Configuration comes from an optional ``key = value`` file (several
``key=value`` tokens may share a line; ``#`` starts a comment) and from flags,
which win over the file.  Model parameters are given either as their own keys
(``theta = 2``) or through ``params = theta=2,mu=6``.

Each run writes into ``<out>/<timestamp>-seed<seed>/``: CSV results, the
resolved ``config.txt`` and ``manifest.json``.  The directory is assembled
under a temporary name and renamed at the end, so an interrupted run leaves
no partial output.  Exit codes: 0 success, 1 invalid configuration, 2 runtime
failure (including failed invariant checks).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .models import DEFAULT_PARAMS, MODELS, ParamVector, get_model

__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize_config", "main"]

COMMANDS = ("simulate", "converge", "infer", "wasserstein", "check")


class ConfigError(ValueError):
    pass


def _floats(s) -> tuple:
    if isinstance(s, (int, float)):
        return (float(s),)
    if isinstance(s, (tuple, list)):
        return tuple(float(v) for v in s)
    out = []
    for tok in str(s).split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok.startswith("2^"):
            out.append(2.0 ** float(tok[2:]))
        else:
            out.append(float(tok))
    return tuple(out)


def _float(s) -> float:
    v, = _floats(s)
    return v


def _ints(s) -> tuple:
    vals = _floats(s)
    if any(v != int(v) or v < 1 for v in vals):
        raise ValueError(f"expected positive integers, got {s!r}")
    return tuple(int(v) for v in vals)


def _names(s) -> tuple:
    if isinstance(s, (tuple, list)):
        return tuple(s)
    return tuple(t.strip() for t in str(s).split(",") if t.strip())


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


@dataclass(frozen=True)
class RunConfig:
    model: str = "cir"
    params: tuple = ()
    x0: float = 1.0
    scheme: tuple = ()
    estimators: tuple = ()
    fixed: tuple = ()
    h_fine: float = 0.0
    h_obs: tuple = ()
    h_list: tuple = ()
    T: float = 0.0
    M: int = 0
    N: tuple = ()
    seed: int = 0
    out: str = "runs"
    paper_scale: bool = False
    kessler_exact: bool = True
    plot: bool = False

    def param_dict(self) -> dict:
        return dict(zip(get_model(self.model).param_names, self.params))


_CONVERTERS = {
    "model": str, "x0": _float, "scheme": _names, "estimators": _names, "fixed": _names,
    "h_fine": _float, "h_obs": _floats, "h_list": _floats, "T": _float, "M": int, "N": _ints,
    "seed": int, "out": str, "paper_scale": _bool, "kessler_exact": _bool, "plot": _bool,
}
_KEYS = tuple(_CONVERTERS) + ("params",)


def _tokens(text: str):
    """Yield ``(line_no, key, value)`` from config text."""
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.count("=") == 1 or line.split("=", 1)[0].strip() == "params":
            k, _, v = line.partition("=")
            k, v = k.strip(), v.strip()
            if not k or not v or " " in k:
                raise ConfigError(f"line {no}: expected 'key = value', got {raw!r}")
            yield no, k, v
            continue
        for tok in line.split():
            k, sep, v = tok.partition("=")
            if not sep or not k or not v:
                raise ConfigError(f"line {no}: expected 'key=value', got {tok!r}")
            yield no, k, v


def _parse_params(s: str) -> dict:
    out = {}
    for tok in str(s).split(","):
        tok = tok.strip()
        if not tok:
            continue
        k, sep, v = tok.partition("=")
        if not sep:
            raise ValueError(f"parameter assignment {tok!r} is not name=value")
        out[k.strip()] = float(v)
    return out


def parse_config(text: str = "", overrides: dict | None = None) -> RunConfig:
    """Validated RunConfig from config text plus flag overrides (flags win)."""
    raw: dict = {}
    pvals: dict = {}
    loose: list = []
    for no, k, v in _tokens(text):
        k = k.replace("-", "_")
        if k == "params":
            try:
                pvals.update(_parse_params(v))
            except ValueError as e:
                raise ConfigError(f"line {no}: {e}") from None
        elif k in _CONVERTERS:
            raw[k] = (no, v)
        else:
            loose.append((no, k, v))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "params":
            pvals.update(_parse_params(v) if isinstance(v, str) else dict(v))
        else:
            raw[k] = (None, v)
    # model first: parameter keys are validated against it
    model_name = str(raw.get("model", (None, "cir"))[1])
    if model_name not in MODELS:
        raise ConfigError(f"unknown model {model_name!r}; valid models: {', '.join(MODELS)}")
    model = MODELS[model_name]
    valid_keys = ", ".join(list(_KEYS) + list(model.param_names))
    for no, k, v in loose:
        if k not in model.param_names:
            where = f"line {no}: " if no else ""
            raise ConfigError(f"{where}unknown key {k!r} for model {model_name}; valid keys: {valid_keys}")
        try:
            pvals.setdefault(k, float(v))
        except ValueError:
            raise ConfigError(f"line {no}: parameter {k} needs a number, got {v!r}") from None
    unknown = set(pvals) - set(model.param_names)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for {model_name}; "
                          f"valid: {', '.join(model.param_names)}")
    defaults = dict(zip(model.param_names, DEFAULT_PARAMS[model_name]))
    defaults.update(pvals)
    params = tuple(defaults[n] for n in model.param_names)
    if not model.is_valid(params):
        raise ConfigError(f"parameters {defaults} are not admissible for {model_name}")
    kw = {"model": model_name, "params": params}
    for k, (no, v) in raw.items():
        if k == "model":
            continue
        try:
            kw[k] = _CONVERTERS[k](v)
        except (TypeError, ValueError) as e:
            where = f"line {no}: " if no else f"--{k.replace('_', '-')}: "
            raise ConfigError(f"{where}bad value {v!r} for {k} ({e})") from None
    cfg = RunConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    from .likelihoods import EstimatorKind
    from .schemes import SchemeKind
    m = get_model(cfg.model)
    try:
        [SchemeKind.parse(s) for s in cfg.scheme]
        [EstimatorKind.parse(e) for e in cfg.estimators]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    bad = [f for f in cfg.fixed if f not in m.param_names]
    if bad:
        raise ConfigError(f"cannot fix unknown parameter(s) {bad}; valid: {', '.join(m.param_names)}")
    for k in ("h_fine", "T"):
        if getattr(cfg, k) < 0:
            raise ConfigError(f"{k} must be positive")
    if any(h <= 0 for h in cfg.h_obs + cfg.h_list):
        raise ConfigError("step sizes must be positive")
    if cfg.M < 0:
        raise ConfigError("M must be positive")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must fit in 64 bits")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"model = {cfg.model}"]
    lines += [f"{k} = {_fmt(float(v))}" for k, v in cfg.param_dict().items()]
    for f in fields(cfg):
        if f.name in ("model", "params"):
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple) and not v:
            continue
        lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


# defaults per subcommand -----------------------------------------------------

def resolve_defaults(cmd: str, cfg: RunConfig) -> RunConfig:
    """Fill unset fields with the subcommand's desk-scale (or paper-scale) defaults."""
    ps = cfg.paper_scale
    d: dict = {}
    if cmd == "simulate":
        d = dict(scheme=("LT",), h_fine=0.01, T=1.0, M=10)
    elif cmd == "converge":
        d = dict(scheme=("LT", "Strang", "SemiDiscrete", "Milstein", "LampertiEuM", "EuM"),
                 h_fine=2.0 ** (-13 if ps else -12), T=1.0, M=1000 if ps else 500,
                 h_list=tuple(2.0 ** -k for k in range(4, 10)))
    elif cmd == "infer":
        d = dict(estimators=("LT", "Strang", "Kessler", "EuM"), h_obs=(0.01,),
                 N=(1000,), M=1000 if ps else 100, h_fine=1e-4 if ps else 1e-3)
    elif cmd == "wasserstein":
        d = dict(scheme=("Strang", "LT", "EuM"), h_list=(0.2, 0.1, 0.05), M=100_000)
    upd = {}
    for k, v in d.items():
        cur = getattr(cfg, k)
        if cur in ((), 0, 0.0):
            upd[k] = v
    return replace(cfg, **upd)


# atomic run directories -------------------------------------------------------

class RunDir:
    def __init__(self, out: str, seed: int, cmd: str):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        self.final = self.root / f"{stamp}-seed{seed}"
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{cmd}-", dir=self.root))

    def path(self, name: str) -> Path:
        return self.tmp / name

    def write_text(self, name: str, text: str):
        p = self.path(name)
        part = p.with_suffix(p.suffix + ".part")
        part.write_text(text)
        os.replace(part, p)

    def commit(self) -> Path:
        os.rename(self.tmp, self.final)
        return self.final

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _csv(header, rows) -> str:
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(_fmt(v) if isinstance(v, (float, bool, tuple)) else str(v)
                            for v in (float(x) if isinstance(x, np.floating) else x for x in r)))
    return "\n".join(out) + "\n"


# subcommands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, rd: RunDir, manifest: dict):
    from .rng import StreamKey, make_noise_grid
    from .schemes import simulate_path, write_trajectories_csv
    n = int(round(cfg.T / cfg.h_fine))
    if n < 1 or not math.isclose(n * cfg.h_fine, cfg.T, rel_tol=1e-9):
        raise ConfigError("T must be a positive multiple of h_fine")
    trajs = [simulate_path(cfg.scheme[0], cfg.model, cfg.params, cfg.x0,
                           make_noise_grid(StreamKey(cfg.seed, i), cfg.h_fine, n))
             for i in range(cfg.M)]
    with open(rd.path("paths.csv"), "w", newline="") as fh:
        write_trajectories_csv(fh, trajs)


def cmd_converge(cfg: RunConfig, rd: RunDir, manifest: dict):
    from .analysis import strong_error_curves
    try:
        reps = strong_error_curves(cfg.scheme, cfg.model, cfg.params, cfg.x0, cfg.T,
                                   cfg.h_list, cfg.h_fine, cfg.M, cfg.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    rows, slopes = [], []
    for name, r in reps.items():
        rows += [(h, s, cfg.M, name, cfg.model) for h, s in r.rows]
        slopes.append((name, r.slope, r.intercept, r.r2))
    rd.write_text("mse.csv", _csv(("h", "s_n", "m", "scheme", "model"), rows))
    rd.write_text("slopes.csv", _csv(("scheme", "slope", "intercept", "r2"), slopes))
    manifest["failures"] = {n: sum(1 for _, s in r.rows if not math.isfinite(s))
                            for n, r in reps.items()}
    if cfg.plot:
        _plot_mse(reps, rd.path("mse.svg"))


def cmd_infer(cfg: RunConfig, rd: RunDir, manifest: dict):
    from .analysis import inference_study
    fixed = {n: v for n, v in cfg.param_dict().items() if n in cfg.fixed}
    st = inference_study(cfg.model, cfg.params, cfg.x0, cfg.estimators, cfg.h_obs, cfg.M,
                         n_list=cfg.N, fixed=fixed, seed=cfg.seed, h_fine=cfg.h_fine,
                         kessler_exact=cfg.kessler_exact)
    rd.write_text("estimates.csv", _csv(
        ("replicate", "estimator", "h_obs", "n", "param", "value", "nll", "converged",
         "runtime_ms"), st.csv_rows()))
    summ = st.summary()
    rd.write_text("summary.csv", _csv(tuple(summ[0]) if summ else ("estimator",),
                                       [tuple(s.values()) for s in summ]))
    manifest["failures"] = {f"{e}|h={h}|N={n}": st.failures(e, h, n)
                            for e, h, n in sorted({(r.estimator, r.h_obs, r.n) for r in st.rows})}
    if cfg.plot:
        _plot_estimates(st, rd.path("estimates.svg"))


def cmd_wasserstein(cfg: RunConfig, rd: RunDir, manifest: dict):
    from .analysis import one_step_wasserstein
    from .models import Unsupported
    rows = []
    for s in cfg.scheme:
        for h in cfg.h_list:
            try:
                w = one_step_wasserstein(cfg.model, cfg.params, s, h, cfg.x0, cfg.M, cfg.seed)
            except Unsupported as e:
                raise ConfigError(str(e)) from None
            rows.append((s, h, w, cfg.M))
    rd.write_text("wasserstein.csv", _csv(("scheme", "h", "w1", "m"), rows))


def cmd_check(cfg: RunConfig, rd: RunDir, manifest: dict):
    from .checks import run_checks
    res = run_checks()
    rd.write_text("check.csv", _csv(("check", "passed", "seconds", "detail"),
                                     [(r.name, r.passed, r.seconds, '"' + r.detail.replace('"', "'") + '"')
                                      for r in res]))
    for r in res:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:18s} {r.detail}")
    manifest["failures"] = {r.name: 1 for r in res if not r.passed}
    if not all(r.passed for r in res):
        raise RuntimeError("invariant checks failed")


def _plot_mse(reps, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, r in reps.items():
        h, s = np.array(r.rows).T
        ax.loglog(h, s, "o-", base=2, label=f"{name} ({r.slope:.2f})")
    ax.set_xlabel("h")
    ax.set_ylabel("S_N")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_estimates(st, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from scipy.stats import gaussian_kde
    cells = sorted({(r.h_obs, r.n) for r in st.rows})
    ests = sorted({r.estimator for r in st.rows})
    fig, axes = plt.subplots(len(cells), len(st.free_params), squeeze=False,
                             figsize=(4 * len(st.free_params), 3 * len(cells)))
    names = get_model(st.model).param_names
    for i, (h, n) in enumerate(cells):
        for j, p in enumerate(st.free_params):
            ax = axes[i, j]
            for e in ests:
                v = st.estimates(e, h, n, p)
                if v.size > 2 and np.ptp(v) > 0:
                    xs = np.linspace(v.min(), v.max(), 200)
                    ax.plot(xs, gaussian_kde(v)(xs), label=e)
            ax.axvline(st.true_params[names.index(p)], color="k", lw=0.8)
            ax.set_title(f"{p}, h_obs={h:g}, N={n}", fontsize=9)
    if axes[0, 0].get_legend_handles_labels()[0]:
        axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


HANDLERS = {"simulate": cmd_simulate, "converge": cmd_converge, "infer": cmd_infer,
            "wasserstein": cmd_wasserstein, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitsde", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sp = sub.add_parser(c)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--model")
        sp.add_argument("--params", help="comma separated name=value list")
        sp.add_argument("--x0", type=float)
        sp.add_argument("--scheme", help="scheme or comma separated list")
        sp.add_argument("--estimators")
        sp.add_argument("--fixed", help="parameter names held at their given values")
        sp.add_argument("--h-fine", dest="h_fine")
        sp.add_argument("--h-obs", dest="h_obs")
        sp.add_argument("--h-list", dest="h_list")
        sp.add_argument("--T", dest="T")
        sp.add_argument("--M", dest="M")
        sp.add_argument("--N", dest="N")
        sp.add_argument("--seed")
        sp.add_argument("--out")
        sp.add_argument("--paper-scale", dest="paper_scale", action="store_const", const="true")
        sp.add_argument("--kessler-expansion", dest="kessler_exact", action="store_const",
                        const="false", help="Kessler moments from the generator expansion only")
        sp.add_argument("--plot", action="store_const", const="true", help="also write SVG plots")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    over = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        text = Path(args.config).read_text() if args.config else ""
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 1
    try:
        cfg = resolve_defaults(cmd, parse_config(text, over))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    rd = RunDir(cfg.out, cfg.seed, cmd)
    manifest = {"command": cmd, "config": serialize_config(cfg), "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__,
                "started_utc": datetime.now(timezone.utc).isoformat()}
    t = time.perf_counter()
    try:
        HANDLERS[cmd](cfg, rd, manifest)
    except ConfigError as e:
        rd.abort()
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        rd.abort()
        print(f"error: {cmd} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    manifest["runtime_s"] = {cmd: time.perf_counter() - t}
    rd.write_text("config.txt", serialize_config(cfg))
    rd.write_text("manifest.json", json.dumps(manifest, indent=2, default=str) + "\n")
    final = rd.commit()
    print(final)
    return 0


if __name__ == "__main__":
    sys.exit(main())
