"""Command-line pipeline: synth, split, train, evaluate, explain, run.

Every subcommand writes into a hidden staging directory and only moves
files into place once all of them were produced, so a failure never leaves
partial artifacts behind.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data import (
    TECHS,
    Dataset,
    SplitBoundaries,
    TargetTransform,
    apply_split,
    ingest_csv,
    split_boundaries,
    write_csv,
)
from .dist_booster import NormalBoostRegressor
from .exceptions import ConfigError, DataError, TputboostError
from .explain import DEFAULT_EXPLAIN_CAP, importance_report
from .metrics import crps_mean, point_metrics, prob_metrics
from .persistence import FORMAT_VERSION, ThroughputModel, load_model, save_model
from .point_booster import PointBoostRegressor
from .synth import DEFAULT_MISSING_RATES, PROFILE_NAMES, GeneratorConfig, write_synth

log = logging.getLogger("tputboost")

METRICS_FORMAT_VERSION = 1
MODEL_CHOICES = ("point", "dist", "both")
RESULT_FIELDS = (
    "mae_std", "mae_kbps", "rmse_std", "rmse_kbps", "r2",
    "crps_std", "c_auc", "coverage95", "best_iteration",
)


@dataclass(frozen=True)
class BoosterConfig:
    max_depth: int
    learning_rate: float = 0.05
    max_iters: int = 1000
    patience: int = 100
    min_samples_leaf: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    input: str | None = None
    synth: GeneratorConfig | None = None
    tech: str | None = None
    models: str = "both"
    point: BoosterConfig = BoosterConfig(max_depth=6)
    dist: BoosterConfig = BoosterConfig(max_depth=3)
    val_weeks: int = 1
    test_weeks: int = 2
    explain_cap: int = DEFAULT_EXPLAIN_CAP
    tz: str = "UTC"

    def __post_init__(self):
        if (self.input is None) == (self.synth is None):
            raise ConfigError("exactly one input source is required (--input or --synth)")
        if self.input is not None and not os.path.isfile(self.input):
            raise ConfigError(f"input file not found: {self.input}")
        if self.models not in MODEL_CHOICES:
            raise ConfigError(f"--model must be one of {MODEL_CHOICES}")
        if self.tech is not None and self.tech not in TECHS:
            raise ConfigError(f"--tech must be one of {TECHS}")
        if self.explain_cap < 1:
            raise ConfigError("--explain-cap must be >= 1")

    @property
    def model_types(self) -> tuple[str, ...]:
        return ("point", "dist") if self.models == "both" else (self.models,)

    def echo(self) -> dict:
        """Everything that can influence results; paths of outputs excluded."""
        out = {
            "input": self.input,
            "synth": None,
            "tech": self.tech,
            "models": self.models,
            "point": dataclasses.asdict(self.point),
            "dist": dataclasses.asdict(self.dist),
            "val_weeks": self.val_weeks,
            "test_weeks": self.test_weeks,
            "explain_cap": self.explain_cap,
            "tz": self.tz,
        }
        if self.synth is not None:
            out["synth"] = {
                "tech": self.synth.tech,
                "n_rows": self.synth.n_rows,
                "seed": self.synth.seed,
                "span_weeks": self.synth.span_weeks,
                "profile": self.synth.profile,
                "missing_rates": dict(sorted(self.synth.missing_rates.items())),
            }
        return out


class StageFailed(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return _exit_code(self.cause)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, TputboostError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 5
    return 1


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageFailed:
        raise
    except (TputboostError, OSError) as exc:
        raise StageFailed(name, exc) from exc


class Staging:
    """Collects outputs in a temp dir under ``out_dir``; ``commit`` moves
    them into place, anything else deletes them."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self._created = not os.path.exists(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        self.root = tempfile.mkdtemp(prefix=".staging-", dir=out_dir)
        self.files: list[str] = []

    def path(self, rel: str) -> str:
        full = os.path.join(self.root, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.files.append(rel)
        return full

    def commit(self):
        for rel in self.files:
            dest = os.path.join(self.out_dir, rel)
            os.makedirs(os.path.dirname(dest), exist_ok=True)
            os.replace(os.path.join(self.root, rel), dest)
        shutil.rmtree(self.root, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.root, ignore_errors=True)
        if self._created:
            with contextlib.suppress(OSError):
                os.rmdir(self.out_dir)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            self.abort()
        return False


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _num(v):
    if v is None:
        return None
    return int(v) if isinstance(v, (int, np.integer)) else float(v)


def _techs_of(ds: Dataset, wanted: str | None) -> list[str]:
    present = set(ds.tech.tolist())
    if wanted is not None:
        if wanted not in present:
            raise DataError(f"no rows with tech {wanted!r}")
        return [wanted]
    techs = [t for t in TECHS if t in present]
    if not techs:
        raise DataError("dataset has no rows")
    return techs


def _require_rows(parts: dict[str, Dataset], tech: str):
    for name, part in parts.items():
        if len(part) == 0:
            raise DataError(f"{name} partition for {tech} is empty")


def fit_models(
    train: Dataset, val: Dataset, cfg: PipelineConfig, tech: str | None, split: SplitBoundaries | None
) -> dict[str, ThroughputModel]:
    transform = TargetTransform.fit(train.throughput)
    y_tr, y_va = transform.forward(train.throughput), transform.forward(val.throughput)
    out = {}
    for kind in cfg.model_types:
        if kind == "point":
            est = PointBoostRegressor(**dataclasses.asdict(cfg.point))
        else:
            est = NormalBoostRegressor(**dataclasses.asdict(cfg.dist))
        log.info("fitting %s model for %s on %d rows", kind, tech, len(train))
        est.fit(train.features, y_tr, eval_set=(val.features, y_va))
        out[kind] = ThroughputModel(
            estimator=est,
            transform=transform,
            feature_names=train.feature_names,
            feature_category=train.feature_category,
            encoders=dict(train.encoders),
            tech=tech,
            split=split,
        )
    return out


def evaluate_model(model: ThroughputModel, test: Dataset):
    """Returns (result fields, calibration curve or None)."""
    y = model.transform.forward(test.throughput)
    if model.model_type == "dist":
        dist = model.pred_dist(test.features)
        pm = point_metrics(y, dist.mu, model.transform)
        prob, curve = prob_metrics(dist, y)
        extra = prob.to_dict()
    else:
        pred = model.predict(test.features)
        pm = point_metrics(y, pred, model.transform)
        extra = {"crps_std": crps_mean(pred, y), "c_auc": None, "coverage95": None}
        curve = None
    res = {**pm.to_dict(), **extra, "best_iteration": int(model.estimator.best_iteration_)}
    return {k: _num(res[k]) for k in RESULT_FIELDS}, curve


def _importance_rows(tech, kind, report):
    return [[tech, kind, f, c, repr(m), repr(z)] for f, c, m, z in report.rows()]


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


IMPORTANCE_HEADER = ["tech", "model", "feature", "category", "mean_abs", "normalized"]
CALIBRATION_HEADER = ["tech", "nominal", "empirical"]


def _fmt(v, digits=4):
    return "-" if v is None else f"{v:.{digits}f}"


def format_summary(results: list[dict]) -> str:
    """Aligned text table, one row per (tech, model)."""
    header = ["Tech", "Model", "MAE std", "MAE kbps", "RMSE std", "RMSE kbps", "R2", "CRPS", "C-AUC", "Cov95"]
    body = []
    for r in results:
        body.append([
            r["tech"], r["model"],
            _fmt(r["mae_std"]), _fmt(r["mae_kbps"], 1), _fmt(r["rmse_std"]), _fmt(r["rmse_kbps"], 1),
            _fmt(r["r2"]), _fmt(r["crps_std"]), _fmt(r["c_auc"]), _fmt(r["coverage95"]),
        ])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _load_dataset(cfg: PipelineConfig, staging: Staging) -> Dataset:
    if cfg.synth is not None:
        path = staging.path("data.csv")
        write_synth(cfg.synth, path, staging.path("truth.csv"))
    else:
        path = cfg.input
    return ingest_csv(path, tz=cfg.tz)


def run_pipeline(cfg: PipelineConfig, out_dir: str) -> dict:
    """End-to-end run; returns the metrics document written to metrics.json."""
    with Staging(out_dir) as st:
        with stage("ingest"):
            ds = _load_dataset(cfg, st)
            techs = _techs_of(ds, cfg.tech)
        with stage("split"):
            bounds = split_boundaries(ds.timestamps, cfg.val_weeks, cfg.test_weeks)
        results, importance, calib_rows, imp_rows = [], [], [], {"mu": [], "log_sigma": []}
        for tech in techs:
            with stage(f"split:{tech}"):
                train, val, test = apply_split(ds.filter_tech(tech), bounds)
                _require_rows({"train": train, "val": val, "test": test}, tech)
            with stage(f"train:{tech}"):
                models = fit_models(train, val, cfg, tech, bounds)
            for kind, model in models.items():
                rel = f"models/{tech}_{kind}.model.json"
                with stage(f"save:{tech}:{kind}"):
                    save_model(model, st.path(rel))
                with stage(f"evaluate:{tech}:{kind}"):
                    res, curve = evaluate_model(model, test)
                results.append({
                    "tech": tech, "model": kind, **res,
                    "n_train": len(train), "n_val": len(val), "n_test": len(test), "model_file": rel,
                })
                if curve is not None:
                    calib_rows += [[tech, repr(float(c)), repr(float(e))] for c, e in zip(curve.nominal, curve.empirical)]
                with stage(f"explain:{tech}:{kind}"):
                    reports = importance_report(model.estimator, test, cap=cfg.explain_cap)
                for head, rep in reports.items():
                    imp_rows[head] += _importance_rows(tech, kind, rep)
                    importance.append({
                        "tech": tech, "model": kind, "head": head,
                        "e2e_radio_ratio": _num(rep.e2e_radio_ratio),
                        "category_sums": rep.category_sums,
                    })
        doc = {
            "format_version": METRICS_FORMAT_VERSION,
            "versions": {"package": __version__, "model_format": FORMAT_VERSION},
            "config": cfg.echo(),
            "split": {**bounds.to_dict(), "val_weeks": cfg.val_weeks, "test_weeks": cfg.test_weeks},
            "n_rejected": int(ds.n_rejected),
            "results": results,
            "importance": importance,
        }
        with stage("report"):
            _dump_json(doc, st.path("metrics.json"))
            if "dist" in cfg.model_types:
                _write_rows(st.path("calibration.csv"), CALIBRATION_HEADER, calib_rows)
            _write_rows(st.path("importance_mu.csv"), IMPORTANCE_HEADER, imp_rows["mu"])
            if "dist" in cfg.model_types:
                _write_rows(st.path("importance_sigma.csv"), IMPORTANCE_HEADER, imp_rows["log_sigma"])
            with open(st.path("summary.txt"), "w", encoding="utf-8") as fh:
                fh.write(format_summary(results))
    return doc


# argument parsing -----------------------------------------------------------

def _missing_rate(text: str):
    name, sep, rate = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected NAME=RATE")
    try:
        return name, float(rate)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate {rate!r}") from None


def _add_synth_args(p, prefix=""):
    p.add_argument(f"--{prefix}n-rows", dest="n_rows", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--span-weeks", type=int, default=16)
    p.add_argument("--profile", choices=PROFILE_NAMES, default="tech")
    p.add_argument("--missing-rate", action="append", type=_missing_rate, default=[],
                   metavar="COLUMN=RATE", help="override one column's missing rate (repeatable)")


def _add_booster_args(p):
    for kind, depth in (("point", 6), ("dist", 3)):
        p.add_argument(f"--{kind}-max-depth", type=int, default=depth)
        p.add_argument(f"--{kind}-learning-rate", type=float, default=0.05)
        p.add_argument(f"--{kind}-max-iters", type=int, default=1000)
        p.add_argument(f"--{kind}-patience", type=int, default=100)
        p.add_argument(f"--{kind}-min-samples-leaf", type=int, default=1)
    p.add_argument("--model", choices=MODEL_CHOICES, default="both")


def _booster_cfg(args, kind) -> BoosterConfig:
    return BoosterConfig(
        max_depth=getattr(args, f"{kind}_max_depth"),
        learning_rate=getattr(args, f"{kind}_learning_rate"),
        max_iters=getattr(args, f"{kind}_max_iters"),
        patience=getattr(args, f"{kind}_patience"),
        min_samples_leaf=getattr(args, f"{kind}_min_samples_leaf"),
    )


def _synth_cfg(args, tech) -> GeneratorConfig:
    rates = dict(DEFAULT_MISSING_RATES)
    rates.update(dict(args.missing_rate))
    return GeneratorConfig(
        tech=tech, n_rows=args.n_rows, seed=args.seed, span_weeks=args.span_weeks,
        missing_rates=rates, profile=args.profile,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tputboost", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic measurement CSV")
    p.add_argument("--tech", choices=TECHS, default="NR_SA")
    _add_synth_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", help="also write per-row true (mu, sigma)")

    p = sub.add_parser("split", help="chronological train/val/test split")
    p.add_argument("--input", required=True)
    p.add_argument("--val-weeks", type=int, default=1)
    p.add_argument("--test-weeks", type=int, default=2)
    p.add_argument("--tz", default="UTC")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="fit models per technology")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--tech", choices=TECHS)
    p.add_argument("--tz", default="UTC")
    _add_booster_args(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="score a saved model on a CSV")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tz", default="UTC")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("explain", help="mean |SHAP| importance of a saved model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tz", default="UTC")
    p.add_argument("--explain-cap", type=int, default=DEFAULT_EXPLAIN_CAP)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("run", help="end-to-end pipeline")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--synth", action="store_true", help="generate data instead of reading --input")
    p.add_argument("--tech", choices=TECHS)
    _add_synth_args(p)
    _add_booster_args(p)
    p.add_argument("--val-weeks", type=int, default=1)
    p.add_argument("--test-weeks", type=int, default=2)
    p.add_argument("--explain-cap", type=int, default=DEFAULT_EXPLAIN_CAP)
    p.add_argument("--tz", default="UTC")
    p.add_argument("--out-dir", required=True)
    return parser


def _pipeline_cfg(args) -> PipelineConfig:
    synth = _synth_cfg(args, args.tech or "NR_SA") if getattr(args, "synth", False) else None
    return PipelineConfig(
        input=getattr(args, "input", None),
        synth=synth,
        tech=args.tech,
        models=args.model,
        point=_booster_cfg(args, "point"),
        dist=_booster_cfg(args, "dist"),
        val_weeks=getattr(args, "val_weeks", 1),
        test_weeks=getattr(args, "test_weeks", 2),
        explain_cap=getattr(args, "explain_cap", DEFAULT_EXPLAIN_CAP),
        tz=args.tz,
    )


def _cmd_synth(args):
    cfg = _synth_cfg(args, args.tech)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    with Staging(out_dir) as st, stage("synth"):
        tmp = st.path(os.path.basename(args.out))
        truth = st.path(os.path.basename(args.truth_out)) if args.truth_out else None
        write_synth(cfg, tmp, truth)
    if args.truth_out and os.path.abspath(os.path.dirname(args.truth_out)) != out_dir:
        os.replace(os.path.join(out_dir, os.path.basename(args.truth_out)), args.truth_out)


def _cmd_split(args):
    with stage("ingest"):
        ds = ingest_csv(args.input, tz=args.tz)
    with stage("split"):
        bounds = split_boundaries(ds.timestamps, args.val_weeks, args.test_weeks)
        parts = dict(zip(("train", "val", "test"), apply_split(ds, bounds)))
    with Staging(args.out_dir) as st, stage("write"):
        for name, part in parts.items():
            write_csv(part, st.path(f"{name}.csv"))
        _dump_json(
            {**bounds.to_dict(), "val_weeks": args.val_weeks, "test_weeks": args.test_weeks,
             "rows": {k: len(v) for k, v in parts.items()}},
            st.path("split.json"),
        )


def _read_split(path):
    """Boundaries from a sibling split.json, if ``split`` wrote one."""
    meta = os.path.join(os.path.dirname(os.path.abspath(path)), "split.json")
    if not os.path.isfile(meta):
        return None
    with open(meta, encoding="utf-8") as fh:
        d = json.load(fh)
    return SplitBoundaries(float(d["val_start"]), float(d["test_start"]))


def _cmd_train(args):
    cfg = _pipeline_cfg_train(args)
    with stage("ingest"):
        train = ingest_csv(args.train, tz=args.tz)
        val = ingest_csv(args.val, encoders=train.encoders, tz=args.tz)
        techs = _techs_of(train, args.tech)
        split = _read_split(args.train)
    with Staging(args.out_dir) as st:
        for tech in techs:
            tr, va = train.filter_tech(tech), val.filter_tech(tech)
            with stage(f"train:{tech}"):
                _require_rows({"train": tr, "val": va}, tech)
                models = fit_models(tr, va, cfg, tech, split)
            for kind, model in models.items():
                with stage(f"save:{tech}:{kind}"):
                    save_model(model, st.path(f"models/{tech}_{kind}.model.json"))


def _pipeline_cfg_train(args) -> PipelineConfig:
    # train reads separate files, so the single-input invariant is checked on --train
    return PipelineConfig(
        input=args.train, tech=args.tech, models=args.model,
        point=_booster_cfg(args, "point"), dist=_booster_cfg(args, "dist"), tz=args.tz,
    )


def _load_for_scoring(args):
    with stage("load"):
        model = load_model(args.model_file)
    with stage("ingest"):
        ds = ingest_csv(args.data, encoders=model.encoders, tz=args.tz)
        if model.tech is not None:
            ds = ds.filter_tech(model.tech)
        if len(ds) == 0:
            raise StageFailed("ingest", DataError("no rows to score"))
        if tuple(ds.feature_names) != tuple(model.feature_names):
            raise StageFailed("ingest", DataError("data features do not match the model's"))
    return model, ds


def _cmd_evaluate(args):
    model, ds = _load_for_scoring(args)
    with stage("evaluate"):
        res, curve = evaluate_model(model, ds)
    tech = model.tech or "all"
    with Staging(args.out_dir) as st, stage("report"):
        doc = {
            "format_version": METRICS_FORMAT_VERSION,
            "versions": {"package": __version__, "model_format": FORMAT_VERSION},
            "config": {"model_file": os.path.basename(args.model_file), "data": os.path.basename(args.data)},
            "split": model.split.to_dict() if model.split else None,
            "n_rejected": int(ds.n_rejected),
            "results": [{"tech": tech, "model": model.model_type, **res, "n_test": len(ds)}],
            "importance": [],
        }
        _dump_json(doc, st.path("metrics.json"))
        if curve is not None:
            _write_rows(st.path("calibration.csv"), CALIBRATION_HEADER,
                        [[tech, repr(float(c)), repr(float(e))] for c, e in zip(curve.nominal, curve.empirical)])


def _cmd_explain(args):
    model, ds = _load_for_scoring(args)
    with stage("explain"):
        if args.explain_cap < 1:
            raise ConfigError("--explain-cap must be >= 1")
        reports = importance_report(model.estimator, ds, cap=args.explain_cap)
    tech = model.tech or "all"
    with Staging(args.out_dir) as st, stage("report"):
        for head, rep in reports.items():
            name = "importance_mu.csv" if head == "mu" else "importance_sigma.csv"
            _write_rows(st.path(name), IMPORTANCE_HEADER, _importance_rows(tech, model.model_type, rep))


def _cmd_run(args):
    with stage("config"):
        cfg = _pipeline_cfg(args)
    doc = run_pipeline(cfg, args.out_dir)
    sys.stdout.write(format_summary(doc["results"]))


COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageFailed as exc:
        print(f"tputboost {args.command}: error {exc}", file=sys.stderr)
        return exc.exit_code
    except (TputboostError, OSError) as exc:
        print(f"tputboost {args.command}: error [config] {exc}", file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
