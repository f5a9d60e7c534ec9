"""Command-line interface: ``mlclust {synth,cluster,pipeline,benchmark}``.

Settings resolve as command-line flag, then config file (``key=value``
lines, given by ``--config`` or ``$MLCLUST_CONFIG``), then built-in defaults.
Every command writes ``manifest.json`` next to its outputs.

Exit codes: 0 success, 2 usage or parse error, 3 GA hit the generation cap,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import statistics
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .csvio import (
    read_bar_csv,
    read_matrix_csv,
    read_panel_csv,
    read_tick_csv,
    write_history_csv,
    write_matrix_csv,
    write_panel_csv,
    write_partition_csv,
)
from .errors import InvalidInputError, NumericalError
from .ga import MUTATION_SCOPES, GaConfig, TerminationReason, default_workers, evolve
from .mst import WEIGHTS, build_forest, export_dot
from .oracle import MAX_BRUTE_FORCE_N, AnnealingSchedule, brute_force_max, simulated_annealing
from .preprocess import (
    DEFAULT_LAMBDA,
    THREE_MINUTES_MS,
    PipelineConfig,
    aggregate_bars,
    correlation_pipeline,
    sample_correlation,
)
from .synth import PlantedSpec, generate_noh

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MAX_GENERATIONS = 3
EXIT_NUMERICAL = 4

CONFIG_ENV = "MLCLUST_CONFIG"

# config key -> (parser, default); the default None on "workers" means "all cores"
SETTINGS: dict[str, tuple] = {
    "pop": (int, 1000),
    "gens": (int, 400),
    "pc": (float, 0.9),
    "pm": (float, 0.1),
    "pkb": (float, 0.9),
    "tol": (float, 1e-5),
    "stall": (int, 50),
    "elite": (int, 10),
    "seed": (int, 0),
    "workers": (int, None),
    "mutation_scope": (str, "offspring"),
    "lambda": (float, DEFAULT_LAMBDA),
    "bar_ms": (int, THREE_MINUTES_MS),
    "warmup": (int, None),
    "q": (float, None),
    "rmt": (None, True),
    "market_mode": (None, True),
    "weights": (str, "corrdist"),
}


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys are allowed."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        kind = SETTINGS[key][0]
        try:
            out[key] = _parse_bool(value) if kind is None else kind(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = {k: default for k, (_, default) in SETTINGS.items()}
    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    if cfg_path:
        if not Path(cfg_path).is_file():
            raise UsageError(f"config file not found: {cfg_path}")
        settings.update(load_config_file(cfg_path))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["workers"] is None:
        settings["workers"] = default_workers()
    return settings


def ga_config(s: dict) -> GaConfig:
    return GaConfig(
        population_size=s["pop"],
        max_generations=s["gens"],
        p_crossover=s["pc"],
        p_mutation=s["pm"],
        p_knowledge_crossover=s["pkb"],
        error_tolerance=s["tol"],
        stall_generations=s["stall"],
        elite_size=s["elite"],
        seed=s["seed"],
        workers=s["workers"],
        mutation_scope=s["mutation_scope"],
    )


def pipeline_config(s: dict) -> PipelineConfig:
    return PipelineConfig(lam=s["lambda"], warmup=s["warmup"], market_mode=s["market_mode"], rmt=s["rmt"], q=s["q"])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, settings: dict, argv: list[str]):
        self.doc = {
            "command": command,
            "version": __version__,
            "argv": argv,
            "config": dict(settings),
            "seed": settings.get("seed"),
            "inputs": {},
            "timings_ms": {},
            "termination_reason": None,
            "outputs": [],
        }

    def add_input(self, path) -> None:
        self.doc["inputs"][str(path)] = sha256_file(path)

    def add_output(self, path) -> Path:
        self.doc["outputs"].append(str(path))
        return Path(path)

    def stage(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                ms = (time.perf_counter() - self.t0) * 1000.0
                manifest.doc["timings_ms"][name] = manifest.doc["timings_ms"].get(name, 0.0) + ms

        return _Timer()

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        self.doc["outputs"].append(str(path))
        path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def parse_cluster_spec(text: str) -> list[int]:
    """``4x10`` -> four clusters of ten; comma-separated terms such as ``2x10,5,15`` combine."""
    sizes = []
    for term in text.split(","):
        term = term.strip()
        m = re.fullmatch(r"(\d+)x(\d+)", term)
        if m:
            sizes += [int(m.group(2))] * int(m.group(1))
        elif term.isdigit():
            sizes.append(int(term))
        else:
            raise UsageError(f"bad cluster term {term!r}; use COUNTxSIZE or SIZE")
    if not sizes or min(sizes) < 1:
        raise UsageError("cluster sizes must be positive")
    return sizes


def tidy_correlation(corr, tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Remove rounding-level asymmetry and diagonal drift from a matrix read from disk.

    Larger defects are left alone so validation reports them.
    """
    c = np.asarray(corr, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        return c, False
    exact = np.array_equal(c, c.T) and np.all(np.diag(c) == 1.0)
    if exact or np.abs(c - c.T).max() > tol or np.abs(np.diag(c) - 1.0).max() > tol:
        return c, False
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c, True


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args, settings: dict) -> int:
    sizes = parse_cluster_spec(args.clusters)
    if sum(sizes) != args.n:
        raise UsageError(f"cluster spec {args.clusters!r} covers {sum(sizes)} assets, but --n is {args.n}")
    try:
        gs = [float(v) for v in args.g.split(",")]
    except ValueError:
        raise UsageError(f"bad coupling list {args.g!r}") from None
    if len(gs) == 1:
        gs *= len(sizes)
    if len(gs) != len(sizes):
        raise UsageError(f"--g lists {len(gs)} couplings for {len(sizes)} clusters")
    spec = PlantedSpec(n=args.n, d=args.d, clusters=tuple(zip(sizes, gs)), seed=settings["seed"], shuffle=args.shuffle)
    out = _out_dir(args.out)
    manifest = Manifest("synth", settings, args.argv)
    manifest.doc["planted"] = {"n": spec.n, "d": spec.d, "clusters": [list(c) for c in spec.clusters], "shuffle": spec.shuffle}
    with manifest.stage("generate"):
        panel, truth = generate_noh(spec)
    names = [f"A{i}" for i in range(spec.n)]
    with manifest.stage("write"):
        write_panel_csv(manifest.add_output(out / "panel.csv"), panel, names)
        write_partition_csv(manifest.add_output(out / "truth.csv"), names, truth)
    manifest.write(out)
    print(f"wrote {out / 'panel.csv'} and {out / 'truth.csv'}")
    return EXIT_OK


def _input_kind(path) -> str:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = sum(1 for line in fh if line.strip() and not line.startswith("#"))
    if header[:3] == ["asset_id", "timestamp_ms", "midprice"]:
        return "ticks"
    return "corr" if len(header) - 1 == rows else "panel"


def _pipeline_prices(path, kind: str, settings: dict, manifest: Manifest):
    with manifest.stage("read"):
        if kind == "ticks":
            ticks = read_tick_csv(path)
            bars = aggregate_bars(ticks, settings["bar_ms"])
            return bars.assets, bars.prices
        return read_bar_csv(path)


def cmd_cluster(args, settings: dict) -> int:
    cfg = ga_config(settings)
    out = _out_dir(args.out)
    manifest = Manifest("cluster", settings, args.argv)
    manifest.add_input(args.input)
    kind = args.input_kind or _input_kind(args.input)
    if args.pipeline or kind in ("ticks", "bars"):
        names, prices = _pipeline_prices(args.input, kind, settings, manifest)
        with manifest.stage("preprocess"):
            last = None
            for _, corr in correlation_pipeline(prices, pipeline_config(settings), names):
                last = corr
        if last is None:
            raise InvalidInputError("input too short: no correlation window after warm-up")
        corr = last
    elif kind == "corr":
        with manifest.stage("read"):
            names, corr = read_matrix_csv(args.input)
            corr, manifest.doc["symmetrized"] = tidy_correlation(corr)
    else:
        with manifest.stage("read"):
            names, panel = read_panel_csv(args.input)
        with manifest.stage("correlate"):
            corr = sample_correlation(panel)

    with manifest.stage("ga"):
        result = evolve(corr, cfg)
    with manifest.stage("mst"):
        forest = build_forest(result.best_partition, corr, settings["weights"])
    with manifest.stage("write"):
        write_partition_csv(manifest.add_output(out / "partition.csv"), names, result.best_partition)
        write_history_csv(manifest.add_output(out / "history.csv"), result.fitness_history)
        manifest.add_output(out / "forest.dot").write_text(export_dot(forest, names), encoding="utf-8", newline="\n")
    manifest.doc["termination_reason"] = result.termination_reason.value
    manifest.doc["best_fitness"] = result.best_fitness
    manifest.doc["generations_run"] = result.generations_run
    manifest.write(out)
    k = int(result.best_partition.max())
    print(
        f"L_c = {result.best_fitness:.6f}  clusters = {k}  generations = {result.generations_run}  "
        f"termination = {result.termination_reason.value}"
    )
    if result.termination_reason is TerminationReason.MAX_GENERATIONS:
        return EXIT_MAX_GENERATIONS
    return EXIT_OK


def cmd_pipeline(args, settings: dict) -> int:
    out = _out_dir(args.out)
    manifest = Manifest("pipeline", settings, args.argv)
    manifest.add_input(args.input)
    kind = args.input_kind or _input_kind(args.input)
    if kind == "corr":
        raise UsageError("pipeline input must be a tick CSV or a bar CSV")
    names, prices = _pipeline_prices(args.input, kind, settings, manifest)
    count = 0
    with manifest.stage("pipeline"):
        for t, corr in correlation_pipeline(prices, pipeline_config(settings), names):
            write_matrix_csv(manifest.add_output(out / f"corr_{t:06d}.csv"), corr, names)
            count += 1
    manifest.doc["bars"] = int(prices.shape[1])
    manifest.doc["windows"] = count
    manifest.write(out)
    print(f"{prices.shape[1]} bars, {count} correlation matrices written to {out}")
    return EXIT_OK


BENCH_COLUMNS = [
    "matrix",
    "n",
    "repeats",
    "median_s",
    "min_s",
    "max_s",
    "ga_fitness",
    "oracle_fitness",
    "ga_matches_oracle",
    "sa_fitness",
    "ga_sa_gap",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def cmd_benchmark(args, settings: dict) -> int:
    corpus = Path(args.corpus)
    files = sorted(corpus.glob("*.csv")) if corpus.is_dir() else []
    if not files:
        raise UsageError(f"no correlation CSVs found in {corpus}")
    out = _out_dir(args.out)
    manifest = Manifest("benchmark", settings, args.argv)
    base = ga_config(settings)
    schedule = AnnealingSchedule(steps=args.sa_steps)
    rows = []
    for path in files:
        manifest.add_input(path)
        names, corr = read_matrix_csv(path)
        corr, _ = tidy_correlation(corr)
        times, fits = [], []
        for r in range(args.repeats):
            cfg = GaConfig(**{**asdict(base), "seed": base.seed + r})
            t0 = time.perf_counter()
            with manifest.stage("ga"):
                res = evolve(corr, cfg)
            times.append(time.perf_counter() - t0)
            fits.append(res.best_fitness)
        ga_fit = max(fits)
        oracle = None
        if len(names) <= MAX_BRUTE_FORCE_N:
            with manifest.stage("brute_force"):
                oracle = brute_force_max(corr).best_fitness
        with manifest.stage("annealing"):
            sa = simulated_annealing(corr, schedule, seed=base.seed).best_fitness
        rows.append(
            {
                "matrix": path.name,
                "n": len(names),
                "repeats": args.repeats,
                "median_s": statistics.median(times),
                "min_s": min(times),
                "max_s": max(times),
                "ga_fitness": ga_fit,
                "oracle_fitness": oracle,
                "ga_matches_oracle": None if oracle is None else int(abs(ga_fit - oracle) <= 1e-9),
                "sa_fitness": sa,
                "ga_sa_gap": ga_fit - sa,
            }
        )

    medians = [r["median_s"] for r in rows]
    footer = [
        f"# matrices={len(rows)}",
        f"# median_s median={statistics.median(medians):.6f} min={min(medians):.6f} max={max(medians):.6f}",
    ]
    checked = [r["ga_matches_oracle"] for r in rows if r["ga_matches_oracle"] is not None]
    if checked:
        footer.append(f"# ga_matches_oracle {sum(checked)}/{len(checked)}")
    csv_path = manifest.add_output(out / "benchmark.csv")
    lines = [",".join(BENCH_COLUMNS)] + [",".join(_fmt(r[c]) for c in BENCH_COLUMNS) for r in rows] + footer
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    table = render_table(rows) + "\n".join(footer) + "\n"
    manifest.add_output(out / "benchmark.txt").write_text(table, encoding="utf-8")
    manifest.write(out)
    print(table, end="")
    return EXIT_OK


def render_table(rows: list[dict]) -> str:
    head = ["matrix", "n", "median_s", "min_s", "max_s", "ga", "oracle", "sa", "ga-sa"]
    body = [
        [
            r["matrix"],
            str(r["n"]),
            f"{r['median_s']:.4f}",
            f"{r['min_s']:.4f}",
            f"{r['max_s']:.4f}",
            f"{r['ga_fitness']:.6f}",
            "-" if r["oracle_fitness"] is None else f"{r['oracle_fitness']:.6f}",
            f"{r['sa_fitness']:.6f}",
            f"{r['ga_sa_gap']:+.6f}",
        ]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
    return "\n".join([fmt(head), fmt(["-" * w for w in widths]), *map(fmt, body)]) + "\n"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_ga_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("genetic algorithm")
    g.add_argument("--pop", type=int, help="population size (1000)")
    g.add_argument("--gens", type=int, help="maximum generations (400)")
    g.add_argument("--pc", type=float, help="crossover probability (0.9)")
    g.add_argument("--pm", type=float, help="mutation probability (0.1)")
    g.add_argument("--pkb", type=float, help="knowledge-based crossover probability (0.9)")
    g.add_argument("--tol", type=float, help="stall improvement tolerance (1e-5)")
    g.add_argument("--stall", type=int, help="stall generations (50)")
    g.add_argument("--elite", type=int, help="elite count (10)")
    g.add_argument("--workers", type=int, help="fitness worker threads (logical cores)")
    g.add_argument("--mutation-scope", dest="mutation_scope", choices=MUTATION_SCOPES)
    g.add_argument("--weights", choices=WEIGHTS, help="MST edge weights (corrdist)")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("preprocessing")
    g.add_argument("--lambda", dest="lambda", type=float, help="EWMA forgetting factor (0.98)")
    g.add_argument("--bar-ms", dest="bar_ms", type=int, help="bar length in ms for tick input (180000)")
    g.add_argument("--warmup", type=int, help="EWMA updates before the first matrix (ceil(1/(1-lambda)))")
    g.add_argument("--q", type=float, help="override N/D for the noise band")
    g.add_argument("--no-rmt", dest="rmt", action="store_const", const=False, help="skip eigenvalue cleaning")
    g.add_argument(
        "--no-market-mode", dest="market_mode", action="store_const", const=False, help="keep the market mode"
    )
    g.add_argument("--input-kind", choices=("corr", "panel", "bars", "ticks"), help="override input detection")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlclust", description="Maximum-likelihood clustering of correlated assets.")
    parser.add_argument("--version", action="version", version=f"mlclust {__version__}")
    parser.add_argument("--config", help=f"key=value settings file (or ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a planted-cluster return panel")
    s.add_argument("--n", type=int, required=True, help="number of assets")
    s.add_argument("--clusters", required=True, help="cluster sizes, e.g. 4x10 or 10,10,20")
    s.add_argument("--g", default="0.8", help="coupling, one value or one per cluster")
    s.add_argument("--d", type=int, default=500, help="observations per asset")
    s.add_argument("--shuffle", action="store_true", help="scatter cluster members across positions")
    s.add_argument("--out", default=".", help="output directory")

    c = sub.add_parser("cluster", help="find the maximum-likelihood partition")
    c.add_argument("input", help="correlation CSV, return panel CSV, bar CSV or tick CSV")
    c.add_argument("--pipeline", action="store_true", help="treat a panel as prices and preprocess it")
    c.add_argument("--out", default=".", help="output directory")
    _add_ga_flags(c)
    _add_pipeline_flags(c)

    p = sub.add_parser("pipeline", help="turn ticks or bars into cleaned correlation matrices")
    p.add_argument("input", help="tick CSV or bar CSV")
    p.add_argument("--out", default=".", help="output directory")
    _add_pipeline_flags(p)

    b = sub.add_parser("benchmark", help="time the GA over a corpus of correlation matrices")
    b.add_argument("corpus", help="directory of correlation CSVs")
    b.add_argument("--repeats", type=int, default=3, help="GA runs per matrix (seeds seed..seed+repeats-1)")
    b.add_argument("--sa-steps", dest="sa_steps", type=int, default=100_000, help="annealing moves")
    b.add_argument("--out", default=".", help="output directory")
    _add_ga_flags(b)

    for sp in (s, c, p, b):
        sp.add_argument("--seed", type=int, help="random seed (0)")
    return parser


COMMANDS = {"synth": cmd_synth, "cluster": cmd_cluster, "pipeline": cmd_pipeline, "benchmark": cmd_benchmark}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.argv = argv
        settings = resolve_settings(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"mlclust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"mlclust: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, OSError) as exc:
        print(f"mlclust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
