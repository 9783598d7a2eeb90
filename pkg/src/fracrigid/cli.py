"""Command-line driver: ``fracrigid solve | symmetrize | rigidity | plotdata | selftest``.

Settings are layered: built-in defaults, then a JSON config file
(``--config``), then explicit flags.  The output directory is taken from
``--out``, else from ``$FRACRIGID_OUTPUT_DIR``, else from the config, else
``./fracrigid-out``.  Every JSON report carries the config hash and the
library version.  Exit codes: 0 success, 1 selftest failure, 2 usage or
runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("fracrigid")

ENV_OUT = "FRACRIGID_OUTPUT_DIR"

DEFAULTS = {
    "domain": "ball",
    "s": 0.5,
    "p": 1.5,
    "C0": "mean-trace",
    "n": 96,
    "levels": None,
    "resample": "snap",
    "function": None,
    "input": None,
    "samples": 256,
    "t": None,
    "times": None,
    "fd": False,
    "fd_times": "0.02,0.01,0.005",
    "flow_times": "0:0.3:0.05",
    "seed": 0,
    "out": "fracrigid-out",
}

PRESETS = {
    "interval": {"kind": "interval", "params": {"a": -1.0, "b": 1.0}},
    "ball": {"kind": "ball", "params": {"center": [0.0, 0.0], "radius": 1.0}},
    "disk": {"kind": "ball", "params": {"center": [0.0, 0.0], "radius": 1.0}},
    "shifted-disk": {"kind": "ball", "params": {"center": [0.3, 0.2], "radius": 1.0}},
    "ellipse": {"kind": "ellipse", "params": {"center": [0.0, 0.0], "axes": [1.3, 0.8], "angle": 0.0}},
    "triangle": {"kind": "polygon", "params": {"vertices": [[0, 0], [1, 0], [0, 1]]}},
    "square": {"kind": "polygon", "params": {"vertices": [[-1, -1], [1, -1], [1, 1], [-1, 1]]}},
    "nonconvex-polygon": {"kind": "polygon",
                          "params": {"vertices": [[0, 0], [2, 0], [2, 2], [1, 0.8], [0, 2]]}},
}


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------------

def _frange(text) -> list:
    """``"0:0.5:0.05"`` (inclusive) or ``"0.1,0.2"`` or a list."""
    if text is None:
        return []
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    text = str(text).strip()
    if not text:
        return []
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise UsageError(f"bad range {text!r}")
            k = int(math.floor((b - a) / step + 1e-9))
            return [round(a + i * step, 12) for i in range(k + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse times {text!r}") from exc


def load_domain(spec):
    """Preset name, inline JSON, or a path to a domain JSON file."""
    from .geometry import ConvexDomain, build_domain

    if isinstance(spec, dict):
        d = spec
    elif str(spec) in PRESETS:
        d = PRESETS[str(spec)]
    elif str(spec).lstrip().startswith("{") or Path(str(spec)).is_file():
        return build_domain(spec)
    else:
        raise UsageError(f"unknown domain {spec!r}: give a preset ({', '.join(PRESETS)}), JSON or a file")
    return ConvexDomain(d["kind"], d["params"], validate=(spec != "nonconvex-polygon"))


def merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        try:
            extra = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from exc
        unknown = set(extra) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(extra)
    if os.environ.get(ENV_OUT):
        cfg["out"] = os.environ[ENV_OUT]
    for k, v in vars(args).items():
        if k in ("command", "config", "func", "verbose") or v is None:
            continue
        cfg[k] = v
    return cfg


def validate(cfg: dict, dim: int | None = None) -> None:
    s, p, n = float(cfg["s"]), float(cfg["p"]), int(cfg["n"])
    if not 0 < s < 1:
        raise UsageError(f"s must lie in (0, 1), got {s}")
    if not 1 <= p <= 2:
        raise UsageError(f"p must lie in [1, 2], got {p}")
    if dim is not None:
        need = 64 if dim == 1 else 48
        if n < need:
            raise UsageError(f"resolution n = {n} below the minimum {need} for dimension {dim}")
    c0 = cfg["C0"]
    if c0 != "mean-trace":
        try:
            if not float(c0) > 0:
                raise ValueError
        except (TypeError, ValueError):
            raise UsageError(f"C0 must be 'mean-trace' or a positive number, got {c0!r}") from None


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(keep, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _stamp(cfg) -> dict:
    return {"config_hash": config_hash(cfg), "version": __version__,
            "config": {k: v for k, v in cfg.items() if k != "out"}}


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, obj) -> None:
    from .shape import _clean

    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------------------

def cmd_solve(cfg: dict) -> int:
    from .eigensolve import boundary_ratio, discretize, solve_lambda, torsion_closed_form
    from .fracops import FracOrder

    dom = load_domain(cfg["domain"])
    validate(cfg, dom.dim)
    o = FracOrder(float(cfg["s"]), dom.dim)
    p = float(cfg["p"])
    t0 = time.perf_counter()
    sol = solve_lambda(discretize(dom, o, int(cfg["n"])), p=p)
    out = _outdir(cfg)
    report = {"domain": dom.to_dict(), "solution": sol.summary(), **_stamp(cfg)}
    trace = None
    if dom.smooth:
        trace = boundary_ratio(sol, dom, o, n_samples=int(cfg["samples"]))
        report["trace"] = trace.summary()
        trace.to_csv(out / "trace.csv")
        if p == 1:
            cf = torsion_closed_form(dom, o)
            exact = float(np.sum(cf["ratio"](trace.points) * trace.weights) / np.sum(trace.weights))
            report["closed_form"] = {"lambda": cf["lam"], "trace_mean": exact}
    sol.save(out / "solution", trace)
    _dump(out / "solve.json", report)
    log.info("solve finished in %.1f s", time.perf_counter() - t0)
    print(f"lambda = {sol.lam:.8g}  (p = {p:g}, s = {o.s:g}, {sol.iterations} iterations)")
    if trace is not None:
        print(f"trace mean = {trace.mean:.6g}, relative variation = {trace.variation:.2%}")
        if "closed_form" in report:
            print(f"closed form: lambda = {report['closed_form']['lambda']:.6g}, "
                  f"trace mean = {report['closed_form']['trace_mean']:.6g}")
    return 0


def cmd_symmetrize(cfg: dict) -> int:
    from .fracops import FracOrder, GridFunction
    from .steiner import steiner_flow_report, symmetrize_function, symmetrize_set

    times = _frange(cfg["times"]) if cfg.get("times") is not None else _frange(cfg.get("t"))
    if not times:
        raise UsageError("give at least one time with --t or --times")
    if any(t < 0 for t in times):
        raise UsageError("times must be nonnegative")
    validate(cfg)
    out = _outdir(cfg)
    if cfg.get("function"):
        path = Path(cfg["function"])
        if not path.is_file():
            raise UsageError(f"function file {path} not found")
        u = GridFunction.load(path)
        o = FracOrder(float(cfg["s"]), u.ndim)
        levels = None if cfg["levels"] is None else int(cfg["levels"])
        if times[0] != 0:
            times = [0.0] + times
        rep = steiner_flow_report(u, o, times, levels, cfg["resample"])
        rep.to_csv(out / "flow.csv")
        symmetrize_function(u, times[-1], levels, cfg["resample"]).to_csv(out / f"u_t{times[-1]:g}.csv")
        _dump(out / "flow.json", {"times": rep.times, "energies": rep.energies, "rate": rep.rate,
                                  "weakly_decreasing": rep.weakly_decreasing(),
                                  "strictly_decreasing": rep.strictly_decreasing, **_stamp(cfg)})
        print(f"energy {rep.energies[0]:.6g} -> {rep.energies[-1]:.6g} over t in [0, {times[-1]:g}]; "
              f"weakly decreasing: {rep.weakly_decreasing()}")
        return 0
    dom = load_domain(cfg["domain"])
    rows = []
    for t in times:
        dt = symmetrize_set(dom, t)
        dt.save(out / f"domain_t{t:g}.json")
        rows.append((t, dt.volume, abs(dt.volume - dom.volume) / dom.volume))
    with (out / "volumes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "volume", "relative_change"])
        for r in rows:
            w.writerow([repr(float(x)) for x in r])
    _dump(out / "symmetrize.json", {"domain": dom.to_dict(), "times": times,
                                    "max_volume_change": max(r[2] for r in rows), **_stamp(cfg)})
    print(f"{len(times)} symmetrized domain(s) written; max relative volume change {max(r[2] for r in rows):.2e}")
    return 0


def cmd_rigidity(cfg: dict) -> int:
    from .fracops import FracOrder
    from .shape import rigidity_check

    dom = load_domain(cfg["domain"])
    if not dom.check_convex():
        print("refused: the rigidity statement assumes a convex domain, and this one is not convex",
              file=sys.stderr)
        return 2
    if not dom.smooth:
        raise UsageError("rigidity needs a smooth domain (interval, ball or ellipse) for the boundary trace")
    validate(cfg, dom.dim)
    o = FracOrder(float(cfg["s"]), dom.dim)
    C0 = None if cfg["C0"] == "mean-trace" else float(cfg["C0"])
    flow = _frange(cfg["flow_times"]) or None
    rep = rigidity_check(dom, o, float(cfg["p"]), n=int(cfg["n"]), C0=C0, n_samples=int(cfg["samples"]),
                         finite_differences=bool(cfg["fd"]), fd_times=tuple(_frange(cfg["fd_times"])),
                         flow_times=flow)
    rep.meta.update(_stamp(cfg))
    out = _outdir(cfg)
    rep.to_json(out / "rigidity.json")
    rep.to_csv(out / "rigidity.csv")
    if rep.flow:
        rep.flow_to_csv(out / "flow.csv")
    msg = rep.message()
    if rep.critical and dom.kind == "ball":
        msg = "critical: ball is a solution domain; " + msg.split(": ", 1)[1]
    print(msg)
    return 0


def _read_table(path: Path):
    with path.open() as fh:
        head = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return head, data


def cmd_plotdata(cfg: dict) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    inputs = cfg.get("input") or []
    if not inputs:
        raise UsageError("plotdata needs --input FILE (flow or trace CSV)")
    out = _outdir(cfg)
    plt.rcParams["svg.hashsalt"] = "fracrigid"
    for name in inputs:
        path = Path(name)
        if not path.is_file():
            raise UsageError(f"input {path} not found")
        head, data = _read_table(path)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if head[0] == "t":
            x, y = data[:, 0], data[:, 1]
            ax.plot(x, y, "o-", ms=3)
            ax.set_xlabel("t")
            ax.set_ylabel(head[1])
            ax.set_title("flow curve")
            cols = ("t", head[1])
        elif head[0] == "theta" and "ratio" in head:
            dim = (len(head) - 4) // 2
            P = data[:, 1:1 + dim]
            y = data[:, head.index("ratio")]
            if dim == 1:
                x = P[:, 0]
                ax.plot(x, y, "o")
                ax.set_xlabel("boundary point")
            else:
                seg = np.linalg.norm(np.diff(np.vstack([P, P[:1]]), axis=0), axis=1)
                x = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
                ax.plot(x, y, "-")
                ax.set_xlabel("arclength")
            mean = float(np.sum(y * data[:, head.index("weight")]) / np.sum(data[:, head.index("weight")]))
            ax.axhline(mean, color="0.5", lw=0.8, ls="--")
            ax.set_ylabel("u / delta^s")
            ax.set_title("boundary trace")
            cols = ("arclength" if dim == 2 else "x", "ratio")
        else:
            plt.close(fig)
            raise UsageError(f"{path}: not a flow or trace table (header {head})")
        fig.tight_layout()
        stem = out / (path.stem + "_plot")
        fig.savefig(stem.with_suffix(".svg"), metadata={"Date": None})
        fig.savefig(stem.with_suffix(".png"), dpi=120)
        plt.close(fig)
        with stem.with_suffix(".csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for a, b in zip(x, y):
                w.writerow([repr(float(a)), repr(float(b))])
        print(f"wrote {stem.with_suffix('.svg')}")
    return 0


def cmd_selftest(cfg: dict) -> int:
    from .selftest import run_suites

    results = run_suites(seed=int(cfg["seed"]))
    out = _outdir(cfg)
    _dump(out / "selftest.json", {"results": results, **_stamp(cfg)})
    bad = [r for r in results if not r["ok"]]
    for r in results:
        print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['name']}: {r['detail']}")
    return 1 if bad else 0


# -- parser ------------------------------------------------------------------------------

def _common(sp):
    sp.add_argument("--config", help="JSON file with default settings (flags win)")
    sp.add_argument("--out", help=f"output directory (else ${ENV_OUT}, config, ./fracrigid-out)")
    sp.add_argument("--domain", help="preset name, inline JSON or a domain file")
    sp.add_argument("--s", type=float, help="fractional order in (0, 1)")
    sp.add_argument("--p", type=float, help="exponent in [1, 2]")
    sp.add_argument("--n", type=int, help="grid cells across the longest bounding-box side")
    sp.add_argument("--seed", type=int)
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracrigid", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="minimizer, lambda and boundary trace")
    _common(sp)
    sp.add_argument("--samples", type=int, help="boundary trace samples")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("symmetrize", help="continuous Steiner symmetrization of a domain or grid function")
    _common(sp)
    sp.add_argument("--t", type=float, help="single time")
    sp.add_argument("--times", help="a:b:step (inclusive) or comma list")
    sp.add_argument("--function", help="grid function file (.csv or .npy)")
    sp.add_argument("--levels", type=int, help="equispaced layer-cake levels (default: exact)")
    sp.add_argument("--resample", choices=("snap", "overlap"), help="grid write-back of symmetrized runs")
    sp.set_defaults(func=cmd_symmetrize)

    sp = sub.add_parser("rigidity", help="criticality of the shape functional over the field battery")
    _common(sp)
    sp.add_argument("--C0", help="'mean-trace' or a positive number")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--fd", action="store_true", default=None, help="also run finite differences")
    sp.add_argument("--fd-times", dest="fd_times")
    sp.add_argument("--flow-times", dest="flow_times", help="Steiner flow times ('' to skip)")
    sp.set_defaults(func=cmd_rigidity)

    sp = sub.add_parser("plotdata", help="SVG/PNG plots from flow or trace CSV files")
    _common(sp)
    sp.add_argument("--input", action="append", help="CSV file (repeatable)")
    sp.set_defaults(func=cmd_plotdata)

    sp = sub.add_parser("selftest", help="run the built-in property suites")
    _common(sp)
    sp.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = merge_config(args)
        return args.func(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit 2
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
