"""Command-line entry point.

Every command reads a YAML/JSON manifest and writes JSON/CSV files to the
output directory. Exit codes: 0 ok, 2 input error, 3 I/O error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from wsgp.backtest import BacktestError, fit_linear_model, run_backtest, simulate, summarize
from wsgp.evaluator import EvaluationError, evaluate
from wsgp.expr import DEFAULT_REGISTRY, AlphaExpr, DslError, Registry, parse, to_text
from wsgp.fitness import NoValidDates, alpha_correlation_matrix, fitness_report
from wsgp.gp import (
    MIN_DATES_USED,
    BaselineParams,
    GpConfig,
    GpRun,
    run_multi_seed,
    run_traditional_gp,
    sparsity_experiment,
    write_histogram_csv,
)
from wsgp.panel import MarketPanel, PanelError, forward_returns, load_csv, resolve_range, write_csv
from wsgp.synth import FlagRates, PlantSpec, SynthConfig, synth_panel

log = logging.getLogger("wsgp")

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    """Parsed run manifest; relative paths resolve against the manifest's directory."""

    command: str
    base_dir: Path
    output_dir: Path
    rng_seed: int = 0
    panel: list[str] | None = None
    synth: dict | None = None
    registry: Registry = DEFAULT_REGISTRY
    horizon_days: int = 5
    alphas: list[AlphaExpr] = field(default_factory=list)
    seeds: list[AlphaExpr] = field(default_factory=list)
    in_sample: tuple | None = None
    out_of_sample: tuple | None = None
    gp: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    sparsity: dict = field(default_factory=dict)
    backtest: dict = field(default_factory=dict)
    min_cross_section: int = 20

    @classmethod
    def load(cls, command: str, path: str | None, output: str | None, seed: int | None) -> "RunManifest":
        data: dict[str, Any] = {}
        base = Path.cwd()
        if path is not None:
            p = Path(path)
            try:
                text = p.read_text()
            except OSError as exc:
                raise OSError(f"cannot read manifest {path}: {exc}") from exc
            try:
                data = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ManifestError(f"manifest is not valid YAML/JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ManifestError("manifest must be a mapping")
            base = p.resolve().parent
        out = output or data.get("output_dir")
        if out is None:
            raise ManifestError("no output directory (use --output or output_dir)")
        out_dir = Path(out) if Path(out).is_absolute() or output else base / out
        registry = DEFAULT_REGISTRY
        if "registry" in data:
            reg = data["registry"]
            registry = Registry.from_dict(reg) if isinstance(reg, dict) else Registry.from_file(base / reg)
        panel = data.get("panel")
        if isinstance(panel, str):
            panel = [panel]
        if panel is not None:
            panel = [str(base / x) for x in panel]

        def exprs(key: str) -> list[AlphaExpr]:
            items = data.get(key) or []
            if not isinstance(items, list):
                raise ManifestError(f"{key} must be a list of expressions")
            return [parse(str(s), registry) for s in items]

        def rng_pair(key: str):
            v = data.get(key)
            if v is None:
                return None
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise ManifestError(f"{key} must be [start, end]")
            return (None if v[0] is None else str(v[0]), None if v[1] is None else str(v[1]))

        known = {
            "output_dir", "rng_seed", "panel", "synth", "registry", "horizon_days", "alphas",
            "seeds", "in_sample", "out_of_sample", "gp", "baseline", "sparsity", "backtest",
            "min_cross_section",
        }
        unknown = set(data) - known
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(
            command=command,
            base_dir=base,
            output_dir=out_dir,
            rng_seed=int(seed if seed is not None else data.get("rng_seed", 0)),
            panel=panel,
            synth=data.get("synth"),
            registry=registry,
            horizon_days=int(data.get("horizon_days", 5)),
            alphas=exprs("alphas"),
            seeds=exprs("seeds"),
            in_sample=rng_pair("in_sample"),
            out_of_sample=rng_pair("out_of_sample"),
            gp=dict(data.get("gp") or {}),
            baseline=dict(data.get("baseline") or {}),
            sparsity=dict(data.get("sparsity") or {}),
            backtest=dict(data.get("backtest") or {}),
            min_cross_section=int(data.get("min_cross_section", 20)),
        )

    def splits(self) -> list[tuple[str, tuple | None]]:
        out = []
        if self.in_sample is not None:
            out.append(("in_sample", self.in_sample))
        if self.out_of_sample is not None:
            out.append(("out_of_sample", self.out_of_sample))
        return out or [("all", None)]

    def gp_config(self, **overrides) -> GpConfig:
        cfg = dict(self.gp)
        cfg.setdefault("rng_seed", self.rng_seed)
        cfg.setdefault("min_cross_section", self.min_cross_section)
        cfg.update(overrides)
        try:
            return GpConfig.from_dict(cfg)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"bad gp config: {exc}") from None


def build_synth_panel(spec: dict, rng_seed: int, registry: Registry = DEFAULT_REGISTRY) -> MarketPanel:
    """Synthetic panel from a manifest ``synth`` block."""
    spec = dict(spec)
    try:
        n_dates = int(spec.pop("n_dates", 250))
        n_stocks = int(spec.pop("n_stocks", 100))
        seed = int(spec.pop("seed", rng_seed))
        plant = spec.pop("plant", None)
        planted = None
        if plant is not None:
            planted = PlantSpec(parse(str(plant["expr"]), registry), float(plant["strength"]))
        rates = FlagRates(**spec.pop("flag_rates", {}))
        config = SynthConfig(flag_rates=rates, **spec)
    except (TypeError, KeyError) as exc:
        raise ManifestError(f"bad synth spec: {exc}") from None
    return synth_panel(np.random.default_rng(seed), n_dates, n_stocks, planted, config, registry)


def load_panel(m: RunManifest) -> MarketPanel:
    if m.panel is not None:
        for p in m.panel:
            if not any(c in p for c in "*?[") and not Path(p).exists():
                raise FileNotFoundError(f"panel file not found: {p}")
        return load_csv(m.panel)
    if m.synth is not None:
        return build_synth_panel(m.synth, m.rng_seed, m.registry)
    raise ManifestError("manifest needs either 'panel' or 'synth'")


def dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    return "" if x is None else repr(float(x))


METRIC_COLS = ["ic", "icir", "rank_ic", "rank_icir", "n_dates_used", "sign"]


def _metric_row(metrics: dict | None) -> list[str]:
    if metrics is None:
        return [""] * len(METRIC_COLS)
    return [_num(metrics[c]) if c not in ("n_dates_used", "sign") else str(metrics[c]) for c in METRIC_COLS]


def _safe_metrics(expr: AlphaExpr, panel, fwd, rng, m: RunManifest) -> dict | None:
    try:
        return fitness_report(evaluate(expr, panel, m.registry), fwd, rng, m.min_cross_section).metrics()
    except (EvaluationError, NoValidDates):
        return None


def cmd_synth(m: RunManifest) -> int:
    if m.synth is None:
        raise ManifestError("synth command needs a 'synth' block")
    panel = build_synth_panel(m.synth, m.rng_seed, m.registry)
    write_csv(panel, m.output_dir / "panel.csv")
    dump_json({"synth": m.synth, "rng_seed": m.rng_seed, "shape": list(panel.shape)}, m.output_dir / "synth.json")
    return EXIT_OK


def cmd_eval(m: RunManifest) -> int:
    if not m.alphas:
        raise ManifestError("eval needs at least one alpha")
    panel = load_panel(m)
    fwd = forward_returns(panel, m.horizon_days)
    results, table, daily = [], [], []
    for k, expr in enumerate(m.alphas):
        alpha = evaluate(expr, panel, m.registry)
        entry: dict[str, Any] = {"alpha": to_text(expr)}
        for name, rng in m.splits():
            try:
                rep = fitness_report(alpha, fwd, rng, m.min_cross_section)
            except NoValidDates:
                entry[name] = None
                table.append([to_text(expr), name] + _metric_row(None))
                continue
            entry[name] = rep.to_dict()
            table.append([to_text(expr), name] + _metric_row(rep.metrics()))
            for d, a, r in zip(rep.dates, rep.daily_ic, rep.daily_rank_ic):
                daily.append([str(k), name, str(d), repr(float(a)), repr(float(r))])
        results.append(entry)
    dump_json(results, m.output_dir / "fitness.json")
    write_rows(m.output_dir / "fitness.csv", ["alpha", "split"] + METRIC_COLS, table)
    write_rows(m.output_dir / "daily_ic.csv", ["alpha_index", "split", "date", "daily_ic", "daily_rank_ic"], daily)
    return EXIT_OK


def _write_runs(m: RunManifest, runs: list[GpRun], prefix: str, sources: list[str]) -> None:
    conv, best_lines = [], []
    for i, run in enumerate(runs):
        (m.output_dir / "runs").mkdir(parents=True, exist_ok=True)
        (m.output_dir / "runs" / f"{prefix}_{i}.json").write_text(run.to_json() + "\n")
        best_lines.append(run.best.text)
        for t, g in enumerate(run.generations):
            conv.append([str(i), sources[i], str(t), str(len(g.individuals)), _num(g.best_fitness)])
    (m.output_dir / f"{prefix}_best.txt").write_text("\n".join(best_lines) + "\n")
    write_rows(m.output_dir / f"{prefix}_convergence.csv", ["run", "source", "generation", "size", "best_fitness"], conv)


def _comparison(m: RunManifest, panel, fwd, pairs: list[tuple[str, AlphaExpr]], path: Path) -> None:
    rows = []
    for label, expr in pairs:
        for name, rng in m.splits():
            rows.append([label, to_text(expr), name] + _metric_row(_safe_metrics(expr, panel, fwd, rng, m)))
    write_rows(path, ["role", "alpha", "split"] + METRIC_COLS, rows)


def cmd_enhance(m: RunManifest) -> int:
    if not m.seeds:
        raise ManifestError("enhance needs at least one seed")
    panel = load_panel(m)
    fwd = forward_returns(panel, m.horizon_days)
    cfg = m.gp_config()
    runs = run_multi_seed([(cfg, s) for s in m.seeds], panel, fwd, m.in_sample, m.registry)
    for i, r in enumerate(runs):
        if isinstance(r, Exception):
            raise RuntimeError(f"run {i} ({to_text(m.seeds[i])}) failed: {r}")
    _write_runs(m, runs, "enhance", [to_text(s) for s in m.seeds])
    pairs = []
    for i, (seed, run) in enumerate(zip(m.seeds, runs)):
        pairs += [(f"seed_{i}", seed), (f"enhanced_{i}", run.best.expr)]
    _comparison(m, panel, fwd, pairs, m.output_dir / "comparison.csv")
    return EXIT_OK


def _baseline_params(m: RunManifest) -> tuple[BaselineParams, int]:
    b = dict(m.baseline)
    n_runs = int(b.pop("n_runs", 1))
    try:
        return BaselineParams(**b), n_runs
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"bad baseline config: {exc}") from None


def cmd_mine_baseline(m: RunManifest) -> int:
    panel = load_panel(m)
    fwd = forward_returns(panel, m.horizon_days)
    params, n_runs = _baseline_params(m)
    cfg = m.gp_config()
    runs = [
        run_traditional_gp(replace(cfg, rng_seed=cfg.rng_seed + i), panel, fwd, m.in_sample, params, m.registry)
        for i in range(n_runs)
    ]
    _write_runs(m, runs, "baseline", [f"random_{i}" for i in range(n_runs)])
    _comparison(m, panel, fwd, [(f"best_{i}", r.best.expr) for i, r in enumerate(runs)], m.output_dir / "comparison.csv")
    return EXIT_OK


def cmd_sparsity(m: RunManifest) -> int:
    s = dict(m.sparsity)
    n = int(s.get("n_samples", 10_000))
    if n < 100:
        raise ManifestError("sparsity.n_samples must be >= 100")
    donor_text = s.get("donor")
    if donor_text is None and not m.seeds:
        raise ManifestError("sparsity needs sparsity.donor or a seed")
    donor = parse(str(donor_text), m.registry) if donor_text is not None else m.seeds[0]
    panel = load_panel(m)
    fwd = forward_returns(panel, m.horizon_days)
    kw = dict(
        date_range=m.in_sample,
        threshold=float(s.get("threshold", 0.03)),
        max_depth=int(s.get("max_depth", 6)),
        registry=m.registry,
        min_cross_section=m.min_cross_section,
        min_dates_used=int(s.get("min_dates_used", MIN_DATES_USED)),
    )
    free = sparsity_experiment(np.random.default_rng(m.rng_seed), n, panel, fwd, **kw)
    same = sparsity_experiment(np.random.default_rng(m.rng_seed), n, panel, fwd, donor=donor, **kw)
    bins = int(s.get("bins", 50))
    write_histogram_csv([free, same], m.output_dir / "histogram.csv", bins)
    dump_json(
        {
            "donor": to_text(donor),
            "unconstrained": free.to_dict(),
            "same_structure": same.to_dict(),
        },
        m.output_dir / "sparsity.json",
    )
    return EXIT_OK


def cmd_corr(m: RunManifest) -> int:
    if len(m.alphas) < 2:
        raise ManifestError("corr needs at least two alphas")
    panel = load_panel(m)
    mats = [evaluate(e, panel, m.registry) for e in m.alphas]
    cm = alpha_correlation_matrix(mats, m.out_of_sample or m.in_sample, m.min_cross_section)
    labels = [to_text(e) for e in m.alphas]
    write_rows(
        m.output_dir / "corr_matrix.csv",
        ["alpha"] + labels,
        [[labels[i]] + [_num(None if np.isnan(x) else x) for x in row] for i, row in enumerate(cm.matrix)],
    )
    dump_json({"alphas": labels, "mean_abs_offdiag": cm.mean_abs_offdiag,
               "n_undefined_pairs": cm.n_undefined_pairs,
               "matrix": [[None if np.isnan(x) else float(x) for x in row] for row in cm.matrix]},
              m.output_dir / "corr_summary.json")
    return EXIT_OK


def load_scores(path: Path, panel: MarketPanel) -> np.ndarray:
    """Score matrix from ``date,stock_id,value`` rows; absent cells are missing."""
    d_idx = {str(d): i for i, d in enumerate(panel.dates)}
    s_idx = {s: j for j, s in enumerate(panel.stocks)}
    out = np.full(panel.shape, np.nan)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["date", "stock_id", "value"]:
            raise ManifestError(f"{path}: header must be date,stock_id,value")
        for row in reader:
            if not row:
                continue
            try:
                i, j = d_idx[row[0]], s_idx[row[1]]
                out[i, j] = float(row[2]) if row[2] != "" else np.nan
            except (KeyError, IndexError, ValueError):
                raise ManifestError(f"{path}:{reader.line_num}: bad score row {row!r}") from None
    return out


def cmd_backtest(m: RunManifest) -> int:
    b = dict(m.backtest)
    scores_path = b.get("scores")
    if not m.alphas and scores_path is None:
        raise ManifestError("backtest needs alphas or backtest.scores")
    train = b.get("train_range", m.in_sample)
    test = b.get("test_range", m.out_of_sample)
    if test is None or (scores_path is None and train is None):
        raise ManifestError("backtest needs train_range and test_range")
    hold_sizes = [int(x) for x in b.get("hold_sizes", [10, 30, 100])]
    cost_rate = float(b.get("cost_rate", 0.0006))
    rebalance_days = int(b.get("rebalance_days", 5))
    panel = load_panel(m)
    if scores_path is not None:
        # precomputed day t - 1 scores replace the fitted model
        scores = load_scores(m.base_dir / scores_path, panel)
        test_rows = resolve_range(panel.dates, tuple(test))

        def trade(n):
            return simulate(panel, scores, test_rows, n, rebalance_days, cost_rate)
    else:
        fwd = forward_returns(panel, m.horizon_days)
        mats = [evaluate(e, panel, m.registry) for e in m.alphas]
        model = fit_linear_model(mats, fwd, tuple(train))
        dump_json(model.to_dict(), m.output_dir / "model.json")

        def trade(n):
            return run_backtest(model, panel, mats, tuple(test), n, rebalance_days, cost_rate)
    rows = []
    for n in hold_sizes:
        rep = trade(n)
        m.output_dir.mkdir(parents=True, exist_ok=True)
        (m.output_dir / f"backtest_{n}.json").write_text(rep.to_json() + "\n")
        rep.write_value_csv(m.output_dir / f"values_{n}.csv")
        rep.write_holdings_csv(m.output_dir / f"holdings_{n}.csv")
        s = summarize(rep)
        rows.append([str(n), _num(s["ar"]), _num(s["sr"]), _num(rep.sigma_p), _num(rep.values[-1]), _num(rep.cost_paid)])
    write_rows(m.output_dir / "summary.csv", ["hold_size", "ar", "sr", "sigma_p", "final_value", "cost_paid"], rows)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "eval": cmd_eval,
    "enhance": cmd_enhance,
    "mine-baseline": cmd_mine_baseline,
    "sparsity": cmd_sparsity,
    "corr": cmd_corr,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsgp", description="Warm-start GP alpha mining toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--manifest", help="YAML or JSON run manifest")
        p.add_argument("--output", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="rng seed (overrides rng_seed)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        manifest = RunManifest.load(args.command, args.manifest, args.output, args.seed)
        return COMMANDS[args.command](manifest)
    except (DslError, ManifestError, PanelError, BacktestError, NoValidDates) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EvaluationError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
