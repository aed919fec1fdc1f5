"""Command-line pipeline: generate -> train-eval -> gap-experiment / curves.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (e.g. the intact network does not converge).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (DISPLAY_NAMES, ConfigError, PipelineConfig, dump_config, load_config)
from .ensemble import (EnsembleModel, ModelFormatError, importance_table, predict,
                       staged_test_error, train)
from .evaluation import EvaluationReport, comparison_table, evaluate
from .features import (Dataset, DatasetError, build_dataset, impute, inject_gaps,
                       read_dataset_csv, split, write_dataset_csv)
from .grid import CaseFormatError, load_case
from .scenarios import ScenarioError, generate_states, write_state_csv
from .security import REPORT_ORDER
from .tree import BACKEND

log = logging.getLogger("powersec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory plus the manifest entry of the running command."""

    def __init__(self, cfg: PipelineConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.times: dict[str, float] = {}
        self.extra: dict = {}

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def produced(self, rel: str) -> None:
        self.artifacts.append(rel)

    def timed(self, stage: str):
        run = self

        class _T:
            def __enter__(self):
                self.t0 = time.monotonic()

            def __exit__(self, *exc):
                run.times[stage] = time.monotonic() - self.t0

        return _T()

    def write_manifest(self) -> None:
        mpath = self.out / MANIFEST
        manifest = {"commands": {}}
        if mpath.exists():
            try:
                manifest = json.loads(mpath.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                log.warning("existing manifest unreadable; starting a new one")
        manifest["commands"][self.command] = {
            "config": dump_config(self.cfg),
            "seed": self.cfg.seed,
            "artifacts": {rel: sha256(self.out / rel) for rel in self.artifacts},
            "wall_time_s": self.times,
            "versions": {"powersec": __version__, "numpy": np.__version__,
                         "python": platform.python_version(), "tree_backend": BACKEND},
            **self.extra,
        }
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_dataset(run: Run) -> Dataset:
    path = run.out / "dataset.csv"
    if not path.exists():
        raise DatasetError(f"{path} not found; run 'powersec generate' first")
    return read_dataset_csv(path)


def _split(run: Run, data: Dataset):
    return split(data, run.cfg.test_fraction, run.cfg.split_seed())


def _model_path(algorithm: str) -> str:
    return f"models/{algorithm}.model"


def _load_model(run: Run, algorithm: str, schema) -> EnsembleModel:
    path = run.out / _model_path(algorithm)
    if not path.exists():
        raise DatasetError(f"{path} not found; run 'powersec train-eval' with {algorithm}")
    model = EnsembleModel.load(path)
    if model.schema != schema:
        raise DatasetError(f"{path}: model schema does not match the dataset")
    return model


def cmd_generate(run: Run) -> None:
    cfg = run.cfg
    case = load_case(cfg.case)
    with run.timed("generate_states"):
        records = generate_states(case, cfg.scenario_config(), cfg.load_model, cfg.solver,
                                  workers=cfg.workers)
    with run.timed("label_and_extract"):
        data = build_dataset(records, case, cfg.weights)
    with run.timed("write"):
        write_dataset_csv(data, run.path("dataset.csv"))
        run.produced("dataset.csv")
        if cfg.write_raw_states:
            write_state_csv(records, case, run.path("states.csv"))
            run.produced("states.csv")
    summary = {"records": len(data), "attributes": data.n_features,
               "diverged": int(sum(not r.state.converged for r in records)),
               "class_counts": data.class_counts()}
    run.path("generate_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True)
                                                 + "\n", encoding="utf-8")
    run.produced("generate_summary.json")
    log.info("generated %d records: %s", len(data), summary["class_counts"])
    print(f"{len(data)} records, {data.n_features} attributes")
    for k, v in summary["class_counts"].items():
        print(f"  {k:<11}{v:>7}")


def _train_eval_one(run: Run, algorithm: str, train_ds: Dataset, test_ds: Dataset):
    params = run.cfg.ensemble_params(algorithm, train_ds.n_features)
    with run.timed(f"train:{algorithm}"):
        model = train(algorithm, train_ds, params, workers=run.cfg.workers)
    model.save(run.path(_model_path(algorithm)))
    run.produced(_model_path(algorithm))
    with run.timed(f"predict:{algorithm}"):
        report = evaluate(predict(model, test_ds.X), test_ds.y)
    for suffix, writer in (("json", report.write_json), ("csv", report.write_csv)):
        rel = f"reports/{algorithm}.{suffix}"
        writer(run.path(rel))
        run.produced(rel)
    return model, report


def cmd_train_eval(run: Run) -> None:
    data = _load_dataset(run)
    train_ds, test_ds = _split(run, data)
    print(f"train {len(train_ds)} / test {len(test_ds)}")
    results: dict[str, EvaluationReport] = {}
    for alg in run.cfg.algorithms:
        model, report = _train_eval_one(run, alg, train_ds, test_ds)
        results[DISPLAY_NAMES[alg]] = report
        print(f"\n{DISPLAY_NAMES[alg]}\n{report.format_table()}")
        if "oob_error" in model.info:
            print(f"out-of-bag error {100 * model.info['oob_error']:.2f}%")
    table = comparison_table(results)
    run.path("reports/comparison.txt").write_text(table + "\n", encoding="utf-8")
    run.produced("reports/comparison.txt")
    with open(run.path("reports/comparison.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "accuracy", "kappa"])
        for name, rep in results.items():
            w.writerow([name, repr(rep.observed_accuracy), repr(rep.kappa)])
    run.produced("reports/comparison.csv")
    print("\n" + table)


def gap_experiment(cfg: PipelineConfig, train_ds: Dataset, test_ds: Dataset,
                   baseline: EnsembleModel | None = None, workers: int = 1):
    """Rows ``(fraction, impute_seconds, test_error)``; fraction 0 first.

    Gaps are blanked in the training set, filled with its own per-attribute
    medians, and the model is retrained on the filled data; the test set
    stays clean."""
    alg = cfg.gap_algorithm
    params = cfg.ensemble_params(alg, train_ds.n_features)
    if baseline is None:
        baseline = train(alg, train_ds, params, workers=workers)
    base_err = float(np.mean(predict(baseline, test_ds.X) != test_ds.y))
    rows = [(0.0, 0.0, base_err)]
    for frac in cfg.gap_fractions:
        if frac == 0:
            continue
        gapped = inject_gaps(train_ds, frac, cfg.gap_seed(frac))
        t0 = time.monotonic()
        filled = impute(gapped, gapped)
        dt = time.monotonic() - t0
        model = train(alg, filled, params, workers=workers)
        rows.append((frac, dt, float(np.mean(predict(model, test_ds.X) != test_ds.y))))
    return rows


def cmd_gap_experiment(run: Run) -> None:
    data = _load_dataset(run)
    train_ds, test_ds = _split(run, data)
    alg = run.cfg.gap_algorithm
    baseline = _load_model(run, alg, data.schema)
    with run.timed("gap_experiment"):
        rows = gap_experiment(run.cfg, train_ds, test_ds, baseline, run.cfg.workers)
    for frac, dt, _ in rows:
        run.times[f"impute:{frac!r}"] = dt
    with open(run.path("gaps.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gap_percent", "time_s", "test_error_percent"])
        for frac, dt, err in rows:
            w.writerow([f"{100 * frac:g}", f"{dt:.4f}", f"{100 * err:.2f}"])
    run.produced("gaps.csv")
    lines = [f"{'% of gaps':>10}{'time in sec.':>14}{'test error, %':>15}"]
    lines += [f"{100 * f:>10g}{dt:>14.4f}{100 * e:>15.2f}" for f, dt, e in rows]
    print(f"{DISPLAY_NAMES[alg]}, median imputation\n" + "\n".join(lines))


def cmd_curves(run: Run) -> None:
    data = _load_dataset(run)
    _, test_ds = _split(run, data)
    alg = run.cfg.curve_algorithm
    model = _load_model(run, alg, data.schema)
    with run.timed("staged_error"):
        table = staged_test_error(model, test_ds)
    order = [int(c) for c in REPORT_ORDER]
    rel = f"curves/staged_error_{alg}.csv"
    with open(run.path(rel), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [c.label for c in REPORT_ORDER] + ["overall"])
        for row in table:
            w.writerow([int(row[0])] + ["" if np.isnan(row[1 + k]) else repr(float(row[1 + k]))
                                        for k in order] + [repr(float(row[-1]))])
    run.produced(rel)
    with run.timed("importance"):
        imp = importance_table(model)
    rel = f"curves/importance_{alg}.csv"
    with open(run.path(rel), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "importance", "share"] + [c.label for c in REPORT_ORDER])
        for name, val, share, per in imp:
            w.writerow([name, repr(val), repr(share)] + [repr(per[k]) for k in order])
    run.produced(rel)
    by_kind = {"V": 0.0, "P": 0.0, "Q": 0.0}
    for name, _, share, _ in imp:
        by_kind[name[0]] += share
    top = [name for name, *_ in imp[:10]]
    summary = {"algorithm": alg, "importance_share_by_kind": by_kind, "top10": top,
               "error_t1": float(table[0, -1]), "error_tN": float(table[-1, -1]),
               "n": int(table[-1, 0])}
    run.path(f"curves/summary_{alg}.json").write_text(json.dumps(summary, indent=2) + "\n",
                                                      encoding="utf-8")
    run.produced(f"curves/summary_{alg}.json")
    print(f"{DISPLAY_NAMES[alg]}: test error {100 * table[0, -1]:.2f}% at t=1, "
          f"{100 * table[-1, -1]:.2f}% at t={int(table[-1, 0])}")
    print("top attributes: " + ", ".join(top))


def verify_manifest(out_dir) -> list[str]:
    """Problems found in ``out_dir/manifest.json`` (empty when intact)."""
    mpath = Path(out_dir) / MANIFEST
    if not mpath.exists():
        return [f"{mpath} not found"]
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return [f"{mpath}: {exc}"]
    problems = []
    for cmd, entry in sorted(manifest.get("commands", {}).items()):
        for rel, digest in sorted(entry.get("artifacts", {}).items()):
            p = Path(out_dir) / rel
            if not p.exists():
                problems.append(f"{cmd}: missing {rel}")
            elif sha256(p) != digest:
                problems.append(f"{cmd}: checksum mismatch for {rel}")
    return problems


COMMANDS = {"generate": cmd_generate, "train-eval": cmd_train_eval,
            "gap-experiment": cmd_gap_experiment, "curves": cmd_curves}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="configuration file (defaults otherwise)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="override run.output_dir")
    common.add_argument("--algorithms", help="comma-separated list, overrides train.algorithms")
    common.add_argument("--workers", type=int, help="override run.workers")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="powersec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"powersec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"generate": "simulate the state database and write dataset.csv",
             "train-eval": "train the selected algorithms and write comparison reports",
             "gap-experiment": "retrain with blanked and median-filled training data",
             "curves": "staged test error and variable importance tables",
             "print-config": "print the effective configuration",
             "verify-manifest": "check that every artifact in the manifest is intact"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["output_dir"] = args.out
    if args.workers is not None:
        kw["workers"] = args.workers
    if args.algorithms is not None:
        kw["algorithms"] = tuple(a.strip() for a in args.algorithms.split(",") if a.strip())
    return replace(cfg, **kw) if kw else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "print-config":
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command == "verify-manifest":
            problems = verify_manifest(cfg.output_dir)
            for p in problems:
                print(p)
            print("manifest OK" if not problems else f"{len(problems)} problem(s)")
            return EXIT_OK if not problems else EXIT_DATA
        run = Run(cfg, args.command)
        COMMANDS[args.command](run)
        run.write_manifest()
        return EXIT_OK
    except ConfigError as exc:
        print(f"powersec: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CaseFormatError, ModelFormatError, FileNotFoundError,
            PermissionError, IsADirectoryError) as exc:
        print(f"powersec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ScenarioError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"powersec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
