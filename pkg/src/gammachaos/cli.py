"""Batch front-end: configuration files, the built-in studies, CSV/JSON
output and log-log rate fitting.

Exit codes: 0 success, 1 failed checks, 2 configuration or I/O error,
3 refused hypothesis violation (order constraint).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import platform
import re
import struct
import sys
import tempfile
import time
from dataclasses import dataclass, field
from math import isnan
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bounds import dejong_report, gamma_bound_report
from .chaos_sim import HypothesisError
from .space import (
    Kernel,
    MeasureSpace,
    dense_kernel,
    make_factor,
    make_grid_space,
    rank_kernel,
    uniform_continuum,
    uniform_grid,
)
from .studies import DEFAULT_SCHEDULES, DESCRIPTIONS, run_builtin

SCHEMA_VERSION = 1
EXPERIMENTS = tuple(DESCRIPTIONS)

COLUMNS = (
    "schema_version", "experiment", "row_kind", "n", "leg", "check", "passed", "value", "tolerance",
    "reps", "nu", "q", "variance", "sigma2", "middle_defect", "a1_exact", "a3_bound", "a4_bound", "a5",
    "Bn", "Cn", "Bn_depoissonized", "Cn_depoissonized", "final_bound", "max_form", "K_assembled",
    "cn_1_0", "cn_1_1", "cn_2_0", "cn_2_1", "cn_2_2", "three_moment_residual",
    "mean", "mean_se", "var", "m3", "m4", "kolmogorov", "d3_lower",
    "cross_corr", "cross_corr_se", "product_gap", "addone_l2", "var_diff",
)
# columns whose decay is fitted and written as plot-ready rate files
RATE_COLUMNS = (
    ("bound", "Cn"), ("bound", "Bn"), ("bound", "final_bound"), ("bound", "three_moment_residual"),
    ("sim", "kolmogorov"), ("sim", "product_gap"), ("depoisson", "var_diff"),
)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    experiment: str
    n_values: list
    reps: int = 100_000
    seed: int = 0
    nu: float = 1.0
    output: str | None = None
    workers: int = 1
    space: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    source: str = ""


def _line_map(text: str) -> dict:
    """(section, key) -> line number, for error messages."""
    out, sec = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")) and sec is not None:
            out[(sec, s.split("=", 1)[0].strip().lower())] = i
    return out


def _num_list(s: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", s.strip()) if x]


def parse_config(path: str | os.PathLike) -> ExperimentConfig:
    text = Path(path).read_text()
    return parse_config_text(text, str(path))


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    lines = _line_map(text)

    def fail(sec, key, msg):
        ln = lines.get((sec, key))
        where = f"{source}:{ln}" if ln else source
        raise ConfigError(f"{where}: [{sec}] {key}: {msg}")

    def get(sec, key, conv, default=None, required=False):
        if not cp.has_option(sec, key):
            if required:
                raise ConfigError(f"{source}: missing [{sec}] {key}")
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as e:
            fail(sec, key, f"cannot parse {raw!r} ({e})")

    sec = "run" if cp.has_section("run") else "experiment"
    if not cp.has_section(sec):
        raise ConfigError(f"{source}: missing [run] section")
    known = {"run", "experiment", "space", "kernel", "tolerance"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"{source}: unknown section [{s}]")
    exp = get(sec, "experiment", str.strip, required=True)
    if exp not in EXPERIMENTS:
        fail(sec, "experiment", f"unknown experiment; choose one of {', '.join(EXPERIMENTS)}")
    ns = get(sec, "n", _num_list, DEFAULT_SCHEDULES.get(exp, []))
    if any(b <= a for a, b in zip(ns, ns[1:])):
        fail(sec, "n", "schedule must be strictly increasing")
    if any(v <= 0 for v in ns):
        fail(sec, "n", "intensities must be positive")
    reps = get(sec, "reps", int, 100_000)
    if exp not in ("identity-suite", "three-moment") and reps < 100:
        fail(sec, "reps", "at least 100 replications are needed for distance estimates")
    seed = get(sec, "seed", int, 0)
    if not 0 <= seed < 2 ** 64:
        fail(sec, "seed", "seed must be an unsigned 64-bit integer")
    nu = get(sec, "nu", float, 1.0)
    if nu <= 0:
        fail(sec, "nu", "nu must be positive")
    cfg = ExperimentConfig(exp, ns, reps, seed, nu, get(sec, "output", str.strip), get(sec, "workers", int, 1),
                           source=text)
    for name in ("space", "kernel"):
        if cp.has_section(name):
            getattr(cfg, name).update({k: v for k, v in cp.items(name)})
            getattr(cfg, name)["_lines"] = {k: lines.get((name, k)) for k, _ in cp.items(name)}
    if cp.has_section("tolerance"):
        for k, _ in cp.items("tolerance"):
            cfg.tolerance[k] = get("tolerance", k, float)
    return cfg


def _split_factors(s: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == ";" or (ch == "," and depth == 0):
            out.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur)
    return [x.strip() for x in out if x.strip()]


def build_space(spec: dict, base_dir: Path = Path(".")) -> MeasureSpace:
    kind = spec.get("kind", "grid").strip()
    lines = spec.get("_lines", {})

    def num(key, default):
        try:
            return float(spec.get(key, default))
        except ValueError:
            raise ConfigError(f"line {lines.get(key)}: [space] {key}: not a number") from None

    a, b = num("a", -1.0), num("b", 1.0)
    mass = num("mass", 1.0)
    if kind == "grid":
        if "points" in spec:
            pts = _num_list(spec["points"])
            w = _num_list(spec.get("weights", ",".join(["1"] * len(pts))))
            return make_grid_space(pts, w)
        return uniform_grid(a, b, int(num("cells", 2)), mass)
    if kind == "continuum":
        bps = _num_list(spec.get("breakpoints", ""))
        return uniform_continuum(a, b, mass, bps, int(num("per_panel", 8)))
    raise ConfigError(f"line {lines.get('kind')}: [space] kind: expected grid or continuum")


_TERM = re.compile(r"\s*([+-])?\s*(?:([0-9.eE+-]+)\s*\*)?\s*([a-z-]+)\s*\(([^()]*)\)\s*")


def _primitive(name: str, args: list[str], text: str, base_dir: Path):
    """(values-on-nodes or None, vectorized callable or None) of one term."""
    if name == "file":
        return np.loadtxt(base_dir / args[0], dtype=float).ravel(), None
    try:
        nums = [float(x) for x in args]
    except ValueError:
        raise ConfigError(f"non-numeric argument in factor {text!r}") from None
    if name == "indicator" and len(nums) == 2:
        lo, hi = nums
        return None, lambda x: ((x[:, 0] > lo) & (x[:, 0] <= hi)).astype(float)
    if name == "scaled-indicator" and len(nums) == 3:
        c, lo, hi = nums
        return None, lambda x: c * ((x[:, 0] > lo) & (x[:, 0] <= hi))
    if name == "poly" and nums:
        coefs = np.array(nums)
        return None, lambda x: np.polynomial.polynomial.polyval(x[:, 0], coefs)
    raise ConfigError(f"unknown factor or wrong arguments in {text!r}")


def _factor(space: MeasureSpace, text: str, base_dir: Path):
    """One factor: a signed sum of terms [c *] name(args) with name in
    indicator(a,b), scaled-indicator(c,a,b), poly(c0,c1,...), file(path)."""
    pos, funcs, vals = 0, [], []
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse factor {text!r}")
        if pos > 0 and not m.group(1):
            raise ConfigError(f"missing + or - in factor {text!r}")
        c = (-1.0 if m.group(1) == "-" else 1.0) * (float(m.group(2)) if m.group(2) else 1.0)
        v, fn = _primitive(m.group(3), [x.strip() for x in m.group(4).split(",") if x.strip()], text, base_dir)
        (vals if fn is None else funcs).append((c, v if fn is None else fn))
        pos = m.end()
    if vals and space.mode.value != "grid":
        raise ConfigError("file() factors need a grid space")
    if vals:
        total = sum(c * v for c, v in vals)
        total = total + sum(c * fn(space.nodes) for c, fn in funcs)
        return make_factor(space, values=total, name=text)
    return make_factor(space, func=lambda x: sum(c * fn(x) for c, fn in funcs), name=text)


def build_kernel(cfg: ExperimentConfig, base_dir: Path = Path(".")) -> Kernel | None:
    """The kernel described by [kernel] on the space of [space], under the
    base measure (intensity 1), or None when no kernel section is given."""
    spec = cfg.kernel
    if not spec:
        return None
    space = build_space(cfg.space, base_dir)
    form = spec.get("form", "rank").strip()
    lines = spec.get("_lines", {})
    try:
        if form == "rank":
            factors = [_factor(space, t, base_dir) for t in _split_factors(spec.get("factors", ""))]
            if not factors:
                raise ConfigError("no factors")
            coefs = _num_list(spec["coefs"]) if "coefs" in spec else None
            if coefs is not None and len(coefs) != len(factors):
                raise ConfigError(f"{len(coefs)} coefs for {len(factors)} factors")
            order = int(spec.get("order", 2))
            return rank_kernel(space, factors, coefs, order)
        if form == "grid":
            arr = np.loadtxt(base_dir / spec["path"].strip(), dtype=float)
            q = int(spec.get("order", arr.ndim))
            A = space.n_nodes
            tensor = arr.reshape((A,) * q)
            return dense_kernel(space, tensor, symmetrize=spec.get("symmetrize", "no").strip() in ("yes", "true", "1"))
    except ConfigError as e:
        raise ConfigError(f"line {lines.get('factors') or lines.get('form')}: [kernel] {e}") from None
    except (ValueError, OSError, KeyError) as e:
        raise ConfigError(f"[kernel]: {e}") from None
    raise ConfigError(f"line {lines.get('form')}: [kernel] form: expected rank or grid")


# --------------------------------------------------------------------------
# rate fitting


def fit_rate(pairs) -> tuple[float, float]:
    """Least-squares slope of log(value) against log(n) and its standard error."""
    pairs = [(float(n), float(v)) for n, v in pairs]
    if len(pairs) < 3:
        raise ValueError("need at least 3 points")
    if any(not (v > 0) or not (n > 0) for n, v in pairs):
        raise ValueError("all n and values must be positive")
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    return float(coef[1]), float(np.sqrt(max(cov[1, 1], 0.0)))


def series(rows, row_kind: str, column: str, leg: str | None = None):
    out = []
    for r in rows:
        if r.get("row_kind") != row_kind or (leg is not None and r.get("leg") != leg):
            continue
        v = r.get(column)
        if v is None or (isinstance(v, float) and isnan(v)):
            continue
        out.append((float(r["n"]), float(v)))
    return sorted(out)


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _sort_key(r: dict):
    n = r.get("n")
    n = -1.0 if n is None or (isinstance(n, float) and isnan(n)) else float(n)
    return (n, str(r.get("row_kind", "")), str(r.get("leg", "")), str(r.get("check", "")))


def _atomic_write(path: Path, text: str | bytes):
    mode = "wb" if isinstance(text, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(experiment: str, rows: list[dict]) -> str:
    lines = [",".join(COLUMNS)]
    for r in sorted(rows, key=_sort_key):
        r = dict(r, schema_version=SCHEMA_VERSION, experiment=experiment)
        extra = set(r) - set(COLUMNS)
        if extra:
            raise ValueError(f"columns outside the schema: {sorted(extra)}")
        lines.append(",".join(_fmt(r.get(c)) for c in COLUMNS))
    return "\n".join(lines) + "\n"


def write_csv(path: Path, experiment: str, rows: list[dict]):
    _atomic_write(path, csv_text(experiment, rows))


def read_csv(path: str | os.PathLike) -> list[dict]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {}
        for k, v in r.items():
            if v == "":
                continue
            try:
                d[k] = float(v) if k not in ("experiment", "row_kind", "leg", "check") else v
            except ValueError:
                d[k] = v
        out.append(d)
    return out


PCHS_MAGIC = b"PCHS"
PCHS_VERSION = 1


def write_pchs(path: Path, columns: dict):
    """Binary columnar dump: magic, u32 version, u32 column count, names as
    u16 length + UTF-8 bytes, u64 row count, then each column as
    little-endian float64, column-major."""
    names = list(columns)
    arrs = [np.asarray(columns[k], dtype="<f8").ravel() for k in names]
    rows = len(arrs[0]) if arrs else 0
    if any(len(a) != rows for a in arrs):
        raise ValueError("columns differ in length")
    buf = [PCHS_MAGIC, struct.pack("<II", PCHS_VERSION, len(names))]
    for k in names:
        b = k.encode()
        buf.append(struct.pack("<H", len(b)) + b)
    buf.append(struct.pack("<Q", rows))
    buf += [a.tobytes() for a in arrs]
    _atomic_write(path, b"".join(buf))


def read_pchs(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != PCHS_MAGIC:
        raise ValueError("not a PCHS file")
    ver, ncol = struct.unpack_from("<II", data, 4)
    if ver != PCHS_VERSION:
        raise ValueError(f"unsupported PCHS version {ver}")
    off, names = 12, []
    for _ in range(ncol):
        (ln,) = struct.unpack_from("<H", data, off)
        names.append(data[off + 2:off + 2 + ln].decode())
        off += 2 + ln
    (rows,) = struct.unpack_from("<Q", data, off)
    off += 8
    out = {}
    for k in names:
        out[k] = np.frombuffer(data, dtype="<f8", count=rows, offset=off).copy()
        off += 8 * rows
    return out


def rates(rows) -> dict:
    out = {}
    legs = sorted({str(r.get("leg")) for r in rows if r.get("leg") is not None})
    for kind, col in RATE_COLUMNS:
        for leg in legs:
            pts = series(rows, kind, col, leg)
            if len(pts) >= 3 and all(v > 0 for _, v in pts):
                slope, se = fit_rate(pts)
                out[f"{col}:{leg}"] = {"row_kind": kind, "points": pts, "slope": slope, "stderr": se}
    return out


def write_outputs(out_dir: Path, cfg: ExperimentConfig, rows: list[dict], wall: float,
                  raw: dict | None = None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg.experiment
    text = csv_text(stem, rows)  # validates the schema before anything is written
    fits = rates(rows)
    for key, fit in fits.items():
        col, leg = key.split(":")
        body = "".join(f"{_fmt(n)} {_fmt(v)}\n" for n, v in fit["points"])
        _atomic_write(out_dir / f"{stem}.rate.{col}.{leg}.dat", f"# n {col}\n" + body)
    manifest = {
        "experiment": stem,
        "description": DESCRIPTIONS[stem],
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "n_values": cfg.n_values,
        "reps": cfg.reps,
        "nu": cfg.nu,
        "workers": cfg.workers,
        "config": cfg.source,
        "versions": {"gammachaos": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "rates": {k: {"slope": v["slope"], "stderr": v["stderr"]} for k, v in fits.items()},
        "wall_time_s": wall,
        "csv": f"{stem}.csv",
    }
    if raw:
        write_pchs(out_dir / f"{stem}.pchs", raw)
        manifest["raw"] = f"{stem}.pchs"
    _atomic_write(out_dir / f"{stem}.json", json.dumps(manifest, indent=2) + "\n")
    _atomic_write(out_dir / f"{stem}.csv", text)
    return manifest


# --------------------------------------------------------------------------
# commands


def run(cfg: ExperimentConfig, out_dir: Path | None = None, dump_raw: bool = False,
        base_dir: Path = Path(".")) -> tuple[int, list[dict]]:
    """Execute one study; returns (exit status, rows)."""
    base = build_kernel(cfg, base_dir)
    raw = {} if dump_raw else None
    t0 = time.perf_counter()
    rows = run_builtin(cfg.experiment, cfg.n_values, cfg.reps, cfg.seed, cfg.workers, base, cfg.nu, raw)
    status = 0
    if cfg.experiment == "identity-suite":
        for r in rows:
            tol = cfg.tolerance.get(r["check"])
            if tol is not None:
                r["tolerance"] = tol
                r["passed"] = int(r["value"] <= tol)
        status = 0 if all(r["passed"] for r in rows) else 1
    if out_dir is not None:
        write_outputs(out_dir, cfg, rows, time.perf_counter() - t0, raw)
    return status, rows


def _cmd_check(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig("identity-suite", [])
    cfg.experiment = "identity-suite"
    if args.seed is not None:
        cfg.seed = args.seed
    status, rows = run(cfg, Path(args.out) if args.out else None)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['check']}: {r['value']:.3e} (tol {r['tolerance']:.1e})")
    return status


def _cmd_bound(args) -> int:
    if not args.config:
        raise ConfigError("bound needs --config with a [kernel] section")
    cfg = parse_config(args.config)
    base = build_kernel(cfg, Path(args.config).parent)
    if base is None:
        raise ConfigError("bound needs a [kernel] section")
    n = cfg.n_values[-1] if cfg.n_values else 1.0
    if base.order == 2 and args.dejong:
        rep = dejong_report(base, n, nu=cfg.nu)
    else:
        rep = gamma_bound_report(base.with_space(base.space.with_intensity(n)), cfg.nu)
    print(rep.to_json())
    return 0


def _cmd_simulate(args) -> int:
    if not args.config:
        raise ConfigError("simulate needs --config")
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    out = Path(args.out or cfg.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    status, rows = run(cfg, out, args.dump_raw, Path(args.config).parent)
    print(f"wrote {out / (cfg.experiment + '.csv')} ({len(rows)} rows)")
    return status


def _cmd_rate(args) -> int:
    rows = read_csv(args.csv)
    pts = series(rows, args.row_kind, args.column, args.leg)
    slope, se = fit_rate(pts)
    print(f"{args.column}: slope {slope:.6f} stderr {se:.6f} ({len(pts)} points)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gammachaos", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="configuration file")
        sp.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
        sp.add_argument("--workers", type=int, help="worker threads")
        sp.add_argument("--out", help="output directory")

    c = sub.add_parser("check", help="run the identity suite")
    common(c)
    c.set_defaults(fn=_cmd_check)
    b = sub.add_parser("bound", help="print the bound report of a kernel as JSON")
    common(b)
    b.add_argument("--dejong", action="store_true", help="report B_n/C_n for h_n = h/n")
    b.set_defaults(fn=_cmd_bound)
    s = sub.add_parser("simulate", help="run a full study")
    common(s)
    s.add_argument("--dump-raw", action="store_true", help="write per-replication draws to a PCHS file")
    s.set_defaults(fn=_cmd_simulate)
    r = sub.add_parser("rate", help="fit a log-log rate from an existing CSV")
    common(r)
    r.add_argument("csv")
    r.add_argument("--column", default="Cn")
    r.add_argument("--row-kind", default="bound")
    r.add_argument("--leg", default=None)
    r.set_defaults(fn=_cmd_rate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except HypothesisError as e:
        print(f"refused: {e}", file=sys.stderr)
        return 3
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
