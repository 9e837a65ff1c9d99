"""Command-line entry point: ``fluxmut <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data or model
error. Every error is one line on stderr starting with ``fluxmut: error:``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import serialize
from .cae import train_cae
from .config import RunConfig, load_config
from .data import Dataset, read_csv, write_csv
from .errors import FluxMutError
from .flow import train_flow
from .kde import build as build_kde
from .pipeline import (FluxMutModel, ablate_residuals, balanced_sample, evaluate_scores, format_auc,
                       roc_from_scores, score_dataset, write_decisions, write_roc)
from .synth import SynthSpec, generate, perturb

logger = logging.getLogger("fluxmut")
PREFIX = "fluxmut: error:"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (same as --set pipeline.seed=N)")
    p.add_argument("-v", "--verbose", action="store_true")


def _models(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model-dir", type=Path, default=Path("."),
                   help="directory holding cae.json, flow.json, kde.json")


def _quantiles(text: str) -> tuple[float, ...]:
    try:
        qs = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad quantile list {text!r}") from None
    if not all(0.0 < q < 1.0 for q in qs):
        raise argparse.ArgumentTypeError("quantiles must lie in (0, 1)")
    return qs


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fluxmut", description="Conditional one-class anomaly detection via generated reference clusters.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic train/val/test CSVs")
    _common(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-features", type=int, default=6)
    p.add_argument("--n-conditions", type=int, default=2)
    p.add_argument("--n-train", type=int, default=20000)
    p.add_argument("--n-val", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--displacement", type=float, default=0.0, help="anomaly shift in pooled standard deviations")
    p.add_argument("--decorrelate", action="store_true", help="anomalies keep marginals, break the feature/condition link")

    p = sub.add_parser("train-cae", help="train the conditional autoencoder")
    _common(p)
    _models(p)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path)

    p = sub.add_parser("train-flow", help="train the conditional flow on augmented vectors")
    _common(p)
    _models(p)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path)

    p = sub.add_parser("build-kde", help="bin flow latents of the training set by conditions")
    _common(p)
    _models(p)
    p.add_argument("--train", type=Path, required=True)

    p = sub.add_parser("infer", help="per-object decisions CSV")
    _common(p)
    _models(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--q", type=float, help="quantile (same as --set pipeline.q=Q)")
    p.add_argument("--out", type=Path, help="decisions CSV (default: stdout)")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("evaluate", help="TPR/TNR table on a labelled CSV")
    _common(p)
    _models(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--quantiles", type=_quantiles, default=(0.68, 0.95, 0.99))
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("roc", help="ROC curve CSV from a quantile sweep, plus AUC")
    _common(p)
    _models(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sample-size", type=int, help="balanced sample size (default from config)")
    p.add_argument("--out", type=Path, help="curve CSV (default: stdout)")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("ablate", help="features-only vs augmented-space TPR/TNR")
    _common(p)
    _models(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--quantiles", type=_quantiles, default=(0.95,))
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("perturb", help="apply the bounded quadratic feature perturbation")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sign", type=float, choices=(-1.0, 1.0), default=1.0)
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--features", help="comma list of feature columns to perturb, e.g. f1,f3 (default: all)")
    p.add_argument("--range-from", type=Path, help="CSV whose per-feature min/max define the range (default: --data)")
    return parser


def _effective_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"pipeline.seed={args.seed}")
    if getattr(args, "q", None) is not None:
        overrides.append(f"pipeline.q={args.q}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"pipeline.workers={args.workers}")
    cfg = load_config(args.config, overrides)
    logger.info("effective configuration (seed %d from %s):\n%s", cfg.seed, cfg.seed_source, cfg.to_ini())
    return cfg


def _need(path: Path) -> Path:
    if not path.is_file():
        raise FluxMutError(f"missing file: {path}")
    return path


def _read(path: Path) -> Dataset:
    return read_csv(_need(path))


def _load_models(model_dir: Path) -> FluxMutModel:
    parts = {kind: serialize.load(_need(model_dir / f"{kind}.json"), kind) for kind in ("cae", "flow", "kde")}
    return FluxMutModel(parts["cae"], parts["flow"], parts["kde"])


def _emit(rows: list[list], header: list[str], out: Path | None) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def _rate_rows(summaries) -> list[list]:
    return [[f"{s.q:g}", f"{s.tpr:.4f}", f"{s.tpr_err:.4f}", f"{s.tnr:.4f}", f"{s.tnr_err:.4f}"] for s in summaries]


RATE_HEADER = ["quantile", "TPR", "TPR_err", "TNR", "TNR_err"]


def cmd_synth(args, cfg: RunConfig) -> None:
    spec = SynthSpec(n_features=args.n_features, n_conditions=args.n_conditions, sigma=args.sigma,
                     displacement=args.displacement, decorrelate=args.decorrelate, n_train=args.n_train,
                     n_val=args.n_val, n_test=args.n_test, seed=cfg.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, ds in generate(spec).items():
        write_csv(ds, args.out_dir / f"{name}.csv")
        logger.info("wrote %s (%d rows)", args.out_dir / f"{name}.csv", len(ds))


def _train_val(args):
    train = _read(args.train)
    val = _read(args.val) if args.val else None
    if val is not None and (val.n_features, val.n_conditions) != (train.n_features, train.n_conditions):
        raise FluxMutError(f"{args.val}: column layout differs from {args.train}")
    return train, val


def cmd_train_cae(args, cfg: RunConfig) -> None:
    train, val = _train_val(args)
    model = train_cae(train.features, train.conditions, cfg.cae_config(),
                      None if val is None else val.features, None if val is None else val.conditions)
    args.model_dir.mkdir(parents=True, exist_ok=True)
    serialize.save(model, args.model_dir / "cae.json")
    logger.info("cAE: %d parameters, best epoch %d, val loss %.6g", model.n_params,
                model.history.best_epoch, min(model.history.val_loss))


def cmd_train_flow(args, cfg: RunConfig) -> None:
    train, val = _train_val(args)
    cae = serialize.load(_need(args.model_dir / "cae.json"), "cae")
    aug = cae.augment(train.features, train.conditions)
    ks = cae.scale_conditions(train.conditions)
    vaug = vks = None
    if val is not None:
        vaug = cae.augment(val.features, val.conditions)
        vks = cae.scale_conditions(val.conditions)
    flow = train_flow(aug, ks, cfg.flow_config(), vaug, vks)
    serialize.save(flow, args.model_dir / "flow.json")
    logger.info("flow: %d parameters, best epoch %d, val NLL %.6g", flow.n_params,
                flow.history.best_epoch, min(flow.history.val_loss))


def cmd_build_kde(args, cfg: RunConfig) -> None:
    train = _read(args.train)
    cae = serialize.load(_need(args.model_dir / "cae.json"), "cae")
    flow = serialize.load(_need(args.model_dir / "flow.json"), "flow")
    k = cfg.values["kde"]
    kde = build_kde(flow, cae.augment(train.features, train.conditions), train.conditions,
                    cfg.grid(train.conditions), cae.scale_conditions(train.conditions),
                    k["min_occupancy"], k["bandwidth_floor"], k["variance_preserving"])
    serialize.save(kde, args.model_dir / "kde.json")
    n_sparse = sum(b.sparse for b in kde.bins.values())
    logger.info("KDE: grid %s, %d occupied bins (%d sparse)", kde.grid.shape, len(kde.bins), n_sparse)


def _scored(args, cfg: RunConfig, data: Dataset):
    model = _load_models(args.model_dir)
    if (data.n_features, data.n_conditions) != (model.cae.n_features, model.cae.n_conditions):
        raise FluxMutError(f"{args.data}: {data.n_features} features/{data.n_conditions} conditions, "
                           f"models expect {model.cae.n_features}/{model.cae.n_conditions}")
    return model, score_dataset(model, data, cfg.seed, cfg.pipeline_config(), cfg["pipeline.workers"])


def _labelled(args) -> Dataset:
    data = _read(args.data)
    if data.labels is None:
        raise FluxMutError(f"{args.data}: a label column is required")
    return data


def cmd_infer(args, cfg: RunConfig) -> None:
    data = _read(args.data)
    _, scores = _scored(args, cfg, data)
    decisions = [s.decide(cfg.q) for s in scores]
    if args.out:
        write_decisions(decisions, args.out)
    else:
        _emit([[d.object_id, repr(d.p_out), repr(d.threshold), repr(d.q), d.verdict, int(d.fallback)]
               for d in decisions], ["id", "P_out", "threshold", "q", "verdict", "fallback_flag"], None)
    logger.info("%d objects, %d outliers at q=%g", len(decisions),
                sum(d.verdict == "outlier" for d in decisions), cfg.q)


def cmd_evaluate(args, cfg: RunConfig) -> None:
    data = _labelled(args)
    _, scores = _scored(args, cfg, data)
    _emit(_rate_rows(evaluate_scores(scores, data.labels, args.quantiles)), RATE_HEADER, args.out)


def cmd_roc(args, cfg: RunConfig) -> None:
    data = _labelled(args)
    n = args.sample_size or cfg["pipeline.roc_sample_size"]
    sample = balanced_sample(data, n, cfg.seed)
    _, scores = _scored(args, cfg, sample)
    curve = roc_from_scores(scores, sample.labels)
    if args.out:
        write_roc(curve, args.out)
    else:
        _emit([[f"{v:.6g}" for v in row] for row in
               zip(curve.q, curve.tpr, curve.sigma_tpr, curve.fpr, curve.sigma_fpr)],
              ["q", "TPR", "sigma_TPR", "FPR", "sigma_FPR"], None)
    print(format_auc(curve))


def cmd_ablate(args, cfg: RunConfig) -> None:
    data = _labelled(args)
    model = _load_models(args.model_dir)
    res = ablate_residuals(model, data, args.quantiles, cfg.seed, cfg.pipeline_config(), cfg["pipeline.workers"])
    rows = [[space] + r for space in ("features", "augmented") for r in _rate_rows(res[space])]
    _emit(rows, ["space"] + RATE_HEADER, args.out)


def cmd_perturb(args, cfg: RunConfig) -> None:
    if not 0.0 <= args.p <= 1.0:
        raise UsageError("--p must lie in [0, 1]")
    data = _read(args.data)
    ref = _read(args.range_from) if args.range_from else data
    if ref.n_features != data.n_features:
        raise FluxMutError(f"{args.range_from}: feature count differs from {args.data}")
    cols = list(range(data.n_features))
    if args.features:
        names = [c.strip() for c in args.features.split(",")]
        valid = {f"f{j + 1}": j for j in cols}
        bad = [c for c in names if c not in valid]
        if bad:
            raise UsageError(f"unknown feature column(s): {', '.join(bad)}")
        cols = [valid[c] for c in names]
    lo, hi = ref.features.min(axis=0), ref.features.max(axis=0)
    flat = [j for j in cols if hi[j] <= lo[j]]
    if flat:
        raise FluxMutError(f"feature(s) {', '.join(f'f{j + 1}' for j in flat)} have zero range")
    x = data.features.copy()
    x[:, cols] = perturb(x[:, cols], lo[cols], hi[cols], args.sign, args.p)
    write_csv(Dataset(x, data.conditions, data.labels, data.ids), args.out)


COMMANDS = {
    "synth": cmd_synth, "train-cae": cmd_train_cae, "train-flow": cmd_train_flow, "build-kde": cmd_build_kde,
    "infer": cmd_infer, "evaluate": cmd_evaluate, "roc": cmd_roc, "ablate": cmd_ablate, "perturb": cmd_perturb,
}


def _setup_logging(verbose: bool) -> None:
    root = logging.getLogger("fluxmut")
    if not any(getattr(h, "_fluxmut", False) for h in root.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("fluxmut: %(levelname)s: %(message)s"))
        h._fluxmut = True
        root.addHandler(h)
    for h in root.handlers:
        if getattr(h, "_fluxmut", False):
            h.stream = sys.stderr
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{PREFIX} {exc}", file=sys.stderr)
        print(parser.format_usage().strip(), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        cfg = _effective_config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"{PREFIX} {exc}", file=sys.stderr)
        return 1
    except (FluxMutError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"{PREFIX} {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
