"""Command-line front end.

Subcommands::

    generate   random system + training/validation data + truth model
    identify   run the randomized method, the baseline or both
    baseline   shorthand for ``identify --method baseline``
    evaluate   metrics of a saved model on a data file
    benchmark  streaming compression + reduced QR against sequential QR

Every option can also come from a JSON file given with ``--config``; flags
on the command line take precedence. Exit status is 0 on success, 1 on a
runtime or numerical failure and 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import DEFAULT_MEMORY_CAP, BaselineConfig, run_conventional
from .datamodel import BlockPartition, TimeSeriesData, check_horizon, hankel_stack, load_timeseries, save_timeseries
from .errors import ConfigError, DimensionError, FR2SIDError, InputError, InstabilityError
from .identify import run_fr2sid
from .matops import lq, sequential_lq
from .metrics import IOCounter, MetricsReport, aggregate_nee, dm_sdc, markov_error, mse_per_channel, nee
from .simulate import INPUT_KINDS, SystemSpec, generate_system, make_input, simulate
from .sketch import POWER_MODES, SketchConfig, sketch_stream
from .statespace import StateSpaceModel

TABLE_SHAPES = ((10, 2, 2, 5), (20, 5, 5, 10), (60, 10, 5, 15), (100, 10, 10, 20))
METHODS = ("fr2sid", "baseline", "both")


@dataclass
class ExperimentConfig:
    """All settings of a CLI run; each field has a default."""

    # data and system
    train: str | None = None
    val: str | None = None
    truth: str | None = None
    n: int | None = None
    m: int | None = None
    p: int | None = None
    nt: int = 10000
    nv: int | None = None
    snr: float = math.inf
    snr_linear: bool = False
    input_kind: str = "white-gaussian"
    sample_time: float | None = None
    complex_pairs: int = 0
    format: str = "csv"
    # identification
    k: int | None = None
    l: int = 5
    q: int = 0
    d: int = 10
    seed: int = 0
    order: int | None = None
    rel_tol: float = 1e-8
    n_iter: int = 50
    method: str = "fr2sid"
    power: str = "block"
    bd_method: str = "structural"
    memory_cap: int = DEFAULT_MEMORY_CAP
    predictor: bool = False
    scale_hankel: bool = False
    out: str = "results"
    # evaluate / benchmark
    model: str | None = None
    data: str | None = None
    shapes: list = field(default_factory=lambda: [list(s) for s in TABLE_SHAPES])
    N: int = 100000
    repeats: int = 10
    qs: list = field(default_factory=lambda: [0, 1])

    @classmethod
    def from_sources(cls, file_path: str | None, overrides: dict) -> "ExperimentConfig":
        values: dict = {}
        names = {f.name for f in dataclasses.fields(cls)}
        if file_path:
            try:
                doc = json.loads(Path(file_path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file {file_path}: {exc}") from None
            unknown = set(doc) - names
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            values.update(doc)
        values.update({k: v for k, v in overrides.items() if v is not None and k in names})
        cfg = cls(**values)
        if isinstance(cfg.snr, str):
            cfg.snr = float(cfg.snr)
        return cfg

    def sketch_config(self, seed: int) -> SketchConfig:
        return SketchConfig(k=self.k, l=self.l, q=self.q, d=self.d, seed=seed,
                            power=self.power, scale_hankel=self.scale_hankel)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(k=self.k, d=self.d, order=self.order, bd_method=self.bd_method,
                              memory_cap=self.memory_cap, rel_tol=self.rel_tol,
                              scale_hankel=self.scale_hankel)

    def check_identify(self) -> None:
        if self.train is None:
            raise ConfigError("--train is required")
        if self.k is None or self.k < 1:
            raise ConfigError("--k must be a positive integer")
        if self.method not in METHODS:
            raise ConfigError(f"--method must be one of {METHODS}")
        if self.n_iter < 1:
            raise ConfigError("--n-iter must be positive")
        if self.q not in (0, 1):
            raise ConfigError("--q must be 0 or 1")
        if self.l < 1 or self.d < 1:
            raise ConfigError("--l and --d must be positive")
        if self.power not in POWER_MODES:
            raise ConfigError(f"--power must be one of {POWER_MODES}")


# ------------------------------------------------------------------ generate


def cmd_generate(cfg: ExperimentConfig) -> int:
    if cfg.n is None or cfg.m is None or cfg.p is None:
        raise ConfigError("--n, --m and --p are required")
    if cfg.nt < 1:
        raise ConfigError("--nt must be positive")
    if cfg.format not in ("csv", "binary"):
        raise ConfigError("--format must be csv or binary")
    if cfg.input_kind not in INPUT_KINDS:
        raise ConfigError(f"--input-kind must be one of {INPUT_KINDS}")
    spec = SystemSpec(cfg.n, cfg.m, cfg.p, sample_time=cfg.sample_time, seed=cfg.seed,
                      complex_pairs=cfg.complex_pairs)
    model = generate_system(spec)
    nv = cfg.nv if cfg.nv is not None else max(1, round(0.3 * cfg.nt))
    s = cfg.seed
    train = simulate(model, make_input(cfg.input_kind, cfg.m, cfg.nt, s + 1), cfg.snr, s + 2,
                     snr_linear=cfg.snr_linear)
    val = simulate(model, make_input(cfg.input_kind, cfg.m, nv, s + 3), seed=s + 4,
                   noise_var=train.noise_var)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if cfg.format == "csv" else "bin"
    save_timeseries(train.ts, out / f"train.{ext}", cfg.format)
    save_timeseries(val.ts, out / f"val.{ext}", cfg.format)
    train.model.save(out / "truth.json")
    print(f"wrote {out / f'train.{ext}'} ({cfg.nt} samples), {out / f'val.{ext}'} ({nv} samples), "
          f"{out / 'truth.json'} (n={cfg.n}, sigma^2={train.noise_var:.6g})")
    return 0


# ------------------------------------------------------------------ identify


def _run_metrics(model: StateSpaceModel, val: TimeSeriesData | None, truth: StateSpaceModel | None,
                 horizon: int, predictor: bool) -> MetricsReport:
    rep = MetricsReport()
    if val is not None:
        try:
            per = mse_per_channel(model, val, predictor)
            rep.mse, rep.mse_per_channel = float(per.sum()), per.tolist()
        except InstabilityError:
            rep.mse = math.inf
    if truth is not None:
        if truth.n == model.n:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                rep.nee = nee(truth.eigenvalues(), model.eigenvalues())
        rep.markov_err = markov_error(model, truth, horizon)
    return rep


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "Inf" if math.isinf(v) else repr(v)
    return str(v)


def cmd_identify(cfg: ExperimentConfig) -> int:
    cfg.check_identify()
    train = load_timeseries(cfg.train)
    val = load_timeseries(cfg.val) if cfg.val else None
    truth = StateSpaceModel.load(cfg.truth) if cfg.truth else None
    for other, name in ((val, "validation data"), (truth, "truth model")):
        if other is not None and (other.m, other.p) != (train.m, train.p):
            raise InputError(f"{name} has (m, p) = ({other.m}, {other.p}), training data has ({train.m}, {train.p})")
    if cfg.order is None and truth is not None:
        order = truth.n
    else:
        order = cfg.order
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = ["fr2sid", "baseline"] if cfg.method == "both" else [cfg.method]
    run_rows, summary_rows = [], []
    for method in methods:
        reps, eigs = [], []
        runs = cfg.n_iter if method == "fr2sid" else 1
        for j in range(runs):
            seed = cfg.seed + j
            counter = IOCounter()
            t0 = time.perf_counter()
            if method == "fr2sid":
                ident = run_fr2sid(train, cfg.sketch_config(seed), order, cfg.rel_tol, counter)
            else:
                bcfg = dataclasses.replace(cfg.baseline_config(), order=order)
                ident = run_conventional(train, bcfg, counter)
            act = 1e3 * (time.perf_counter() - t0)
            rep = _run_metrics(ident.model, val, truth, 2 * cfg.k, cfg.predictor)
            rep.act_ms = act
            rep.io_words_read, rep.io_words_written = counter.words_read, counter.words_written
            rep.blocks_read = counter.blocks_read
            reps.append(rep)
            eigs.append(ident.model.eigenvalues())
            if j == 0:
                ident.model.save(out / f"model_{method}.json")
            run_rows.append([method, j, seed] + rep.csv_row())
        agg_nee = None
        if truth is not None and all(e.size == truth.n for e in eigs):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                agg_nee = aggregate_nee(truth.eigenvalues(), eigs)
        mses = [r.mse for r in reps if r.mse is not None]
        summary_rows.append([
            method, runs, float(np.mean([r.act_ms for r in reps])), agg_nee,
            float(np.mean(mses)) if mses else None,
        ])
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "run", "seed", "nee", "mse", "markov_err", "subspace_dist", "act_ms",
                    "io_words_read", "io_words_written", "blocks_read", "mse_per_channel"])
        w.writerows(run_rows)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n_iter", "act_ms", "nee", "net_mse"])
        w.writerows([[_fmt(v) for v in row] for row in summary_rows])
    (out / "metrics.json").write_text(json.dumps(
        {row[0]: {"n_iter": row[1], "act_ms": row[2], "nee": row[3], "net_mse": row[4]} for row in summary_rows},
        indent=1, default=str,
    ))
    print(f"{'method':<10}{'runs':>6}{'ACT [ms]':>12}{'NEE':>14}{'Net-MSE':>14}")
    for method, runs, act, agg, mse in summary_rows:
        print(f"{method:<10}{runs:>6}{act:>12.2f}{_sci(agg):>14}{_sci(mse):>14}")
    return 0


def _sci(v) -> str:
    return "-" if v is None else f"{v:.3e}"


# ------------------------------------------------------------------ evaluate


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    if cfg.model is None or cfg.data is None:
        raise ConfigError("--model and --data are required")
    model = StateSpaceModel.load(cfg.model)
    data = load_timeseries(cfg.data)
    truth = StateSpaceModel.load(cfg.truth) if cfg.truth else None
    if (model.m, model.p) != (data.m, data.p):
        raise DimensionError(f"model has (m, p) = ({model.m}, {model.p}), data has ({data.m}, {data.p})")
    horizon = 2 * cfg.k if cfg.k else 2 * max(model.n, 1)
    rep = _run_metrics(model, data, truth, horizon, cfg.predictor)
    print(rep.to_json())
    for key, val in rep.to_dict().items():
        if key != "mse_per_channel":
            print(f"{key:<18}{_fmt(val)}")
    return 0


# ----------------------------------------------------------------- benchmark


def benchmark_shape(k: int, m: int, p: int, d: int, N: int, qs=(0, 1), repeats: int = 1,
                    seed: int = 0, l: int = 5, memory_cap: int = DEFAULT_MEMORY_CAP,
                    power: str = "block") -> list[dict]:
    """Time sequential QR of ``H^T`` against compression plus reduced QR.

    The data are uniform(0, 1) samples, so every Hankel entry is uniform on
    (0, 1). Both methods stream the same ``d`` column blocks. The sequential
    QR time is recorded as ``inf`` when its working set (triangular factor
    plus one block) exceeds ``memory_cap``.

    Returns
    -------
    list of dict
        One record per ``q``.
    """
    rng = np.random.default_rng(seed)
    ts = TimeSeriesData(rng.uniform(size=(m, N + 2 * k - 1)), rng.uniform(size=(p, N + 2 * k - 1)))
    N = check_horizon(ts, k)
    rows = 2 * k * (m + p)
    part = BlockPartition(d, N)
    sqr_ms, sqr_io = math.inf, IOCounter()
    if sqr_memory_estimate(rows, N, d) <= memory_cap:
        times = []
        for _ in range(repeats):
            sqr_io = IOCounter()
            t0 = time.perf_counter()
            sequential_lq((hankel_stack(ts, k, *part.bounds(i)) for i in range(d)), rows, sqr_io)
            times.append(time.perf_counter() - t0)
        sqr_ms = 1e3 * float(np.mean(times))
    records = []
    for q in qs:
        times = []
        for r in range(repeats):
            io = IOCounter()
            cfg = SketchConfig(k=k, l=l, q=q, d=d, seed=seed + r, power=power)
            t0 = time.perf_counter()
            sk = sketch_stream(ts, cfg, io)
            lq(sk.Hbar, keep_q=False)
            times.append(time.perf_counter() - t0)
        sdc_ms = 1e3 * float(np.mean(times))
        formula = dm_sdc(k, m, p, N, l, q, d)
        measured = io.words + io.messages_read
        records.append({
            "k": k, "m": m, "p": p, "d": d, "N": N, "q": q,
            "H_shape": f"{rows}x{N}", "Hbar_shape": f"{rows}x{sk.n_c}",
            "sqr_ms": sqr_ms, "sdc_rqr_ms": sdc_ms, "speedup": sqr_ms / sdc_ms,
            "io_words_sqr": sqr_io.words, "io_words_sdc": measured, "dm_sdc": formula,
            "io_ratio": measured / formula,
        })
    return records


def sqr_memory_estimate(rows: int, N: int, d: int) -> int:
    """Bytes held by the sequential QR: the factor and the widest block."""
    widest = N - (d - 1) * (N // d)
    return 8 * rows * (rows + widest)


BENCH_COLUMNS = ("k", "m", "p", "d", "N", "q", "H_shape", "Hbar_shape", "sqr_ms", "sdc_rqr_ms",
                 "speedup", "io_words_sqr", "io_words_sdc", "dm_sdc", "io_ratio")


def cmd_benchmark(cfg: ExperimentConfig) -> int:
    if cfg.repeats < 1:
        raise ConfigError("--repeats must be positive")
    shapes = [tuple(int(v) for v in s) for s in cfg.shapes]
    if any(len(s) != 4 for s in shapes):
        raise ConfigError("each shape needs four values k,m,p,d")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, m, p, d in shapes:
        recs = benchmark_shape(k, m, p, d, cfg.N, cfg.qs, cfg.repeats, cfg.seed, cfg.l,
                               cfg.memory_cap, cfg.power)
        for rec in recs:
            rows.append(rec)
            print(f"{{{k},{m},{p},{d}}} q={rec['q']}  H {rec['H_shape']}  Hbar {rec['Hbar_shape']}  "
                  f"SQR {rec['sqr_ms']:.1f} ms  SDC+RQR {rec['sdc_rqr_ms']:.1f} ms  "
                  f"speedup {rec['speedup']:.2f}  IO/formula {rec['io_ratio']:.4f}")
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for rec in rows:
            w.writerow([_fmt(rec[c]) for c in BENCH_COLUMNS])
    return 0


# ---------------------------------------------------------------------- main


def _parse_shape(s: str) -> list[int]:
    try:
        vals = [int(v) for v in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must be k,m,p,d integers, got {s!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"shape must have four values, got {s!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values (flags override it)")
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--seed", type=int, help="base seed (default: 0)")

    ident = argparse.ArgumentParser(add_help=False)
    ident.add_argument("--train", help="training data file (.csv or binary)")
    ident.add_argument("--val", help="validation data file")
    ident.add_argument("--truth", help="ground-truth model JSON")
    ident.add_argument("--k", type=int, help="horizon")
    ident.add_argument("--l", type=int, help="oversampling (default: 5)")
    ident.add_argument("--q", type=int, choices=(0, 1), help="power exponent (default: 0)")
    ident.add_argument("--d", type=int, help="column blocks streamed (default: 10)")
    ident.add_argument("--order", type=int, help="model order (default: truth order or estimated)")
    ident.add_argument("--rel-tol", type=float, help="singular-value threshold (default: 1e-8)")
    ident.add_argument("--n-iter", type=int, help="Monte-Carlo runs of the randomized method (default: 50)")
    ident.add_argument("--power", choices=POWER_MODES, help="grouping of the q=1 step (default: block)")
    ident.add_argument("--bd-method", choices=("structural", "regression"), help="baseline B/D estimator")
    ident.add_argument("--memory-cap", type=int, help="baseline memory cap in bytes (default: 4 GiB)")
    ident.add_argument("--predictor", action="store_true", default=None,
                       help="score with the one-step Kalman predictor instead of simulation")
    ident.add_argument("--scale-hankel", action="store_true", default=None,
                       help="use 1/sqrt(N)-scaled Hankel matrices")

    parser = argparse.ArgumentParser(prog="fr2sid", description="Fast randomized subspace identification.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate a random system")
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--nt", type=int, help="training samples (default: 10000)")
    g.add_argument("--nv", type=int, help="validation samples (default: 0.3 * nt)")
    g.add_argument("--snr", type=float, help="signal-to-noise ratio in dB (default: inf)")
    g.add_argument("--snr-linear", action="store_true", default=None, help="read --snr as a power ratio")
    g.add_argument("--input-kind", choices=INPUT_KINDS)
    g.add_argument("--sample-time", type=float)
    g.add_argument("--complex-pairs", type=int)
    g.add_argument("--format", choices=("csv", "binary"))

    i = sub.add_parser("identify", parents=[common, ident], help="identify a model")
    i.add_argument("--method", choices=METHODS)
    sub.add_parser("baseline", parents=[common, ident], help="conventional identification only")

    e = sub.add_parser("evaluate", parents=[common], help="score a saved model")
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--truth")
    e.add_argument("--k", type=int, help="Markov horizon is 2k")
    e.add_argument("--predictor", action="store_true", default=None)

    b = sub.add_parser("benchmark", parents=[common], help="QR timing comparison")
    b.add_argument("--shape", dest="shapes", type=_parse_shape, action="append",
                   help="k,m,p,d (repeatable; default: the four reference shapes)")
    b.add_argument("--N", type=int, help="Hankel column count (default: 100000)")
    b.add_argument("--repeats", type=int, help="timing repeats (default: 10)")
    b.add_argument("--q", dest="qs", type=int, choices=(0, 1), action="append")
    b.add_argument("--l", type=int)
    b.add_argument("--memory-cap", type=int)
    b.add_argument("--power", choices=POWER_MODES)
    return parser


COMMANDS = {
    "generate": cmd_generate, "identify": cmd_identify, "baseline": cmd_identify,
    "evaluate": cmd_evaluate, "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if args.command == "baseline":
        overrides["method"] = "baseline"
    try:
        cfg = ExperimentConfig.from_sources(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (ConfigError, InputError, FileNotFoundError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FR2SIDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
