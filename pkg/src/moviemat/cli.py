"""Command-line experiment runner.

Subcommands: ``train`` (grid search one variant, save the best model),
``compare`` (grid search several variants on one split, emit table and
figure data), ``predict`` (query a saved model), ``storage-estimate``
(tensor vs matrix-target parameter storage), and ``stats`` (dataset
summary). All numeric output is reproducible: identical config and seeds
give byte-identical artifacts.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .dataset import ContextField, DataError, Dataset, dataset_stats, \
    default_comoda_schema, load_dataset, load_schema, split_train_test
from .model import FactorModel, ModelVariant, VARIANT_NAMES, init_model, \
    model_from_dict, model_to_dict, predict_context, predict_rating
from .trainer import DivergenceError, TrainConfig, grid_results_to_dicts, \
    grid_search, train, write_trace_csv

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DEFAULT_LR_GRID",
    "estimate_tensor_bytes",
    "estimate_matmat_bytes",
    "format_bytes_binary",
    "main",
    "entrypoint",
]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3

DEFAULT_LR_GRID = (0.001, 0.005, 0.01, 0.05, 0.1)
DEFAULT_VARIANTS = ("classic", "moviemat", "moviemat-plus")

_DME_FORMULA = ("negative least-squares slope of ln(recommendation "
                "frequency) against ln(popularity rank) over items "
                "recommended at least once")


class ConfigError(Exception):
    """Bad flags, bad config file, or inconsistent settings."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Merged settings for one experiment run (flags beat config file)."""

    dataset: str
    schema: str | None = None
    variant: str = "moviemat"
    variants: tuple[str, ...] = DEFAULT_VARIANTS
    latent_dim: int = 8
    epochs: int = 100
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID
    l2_lambda: float = 0.0
    seed: int = 1
    split_seed: int = 42
    test_fraction: float = 0.2
    top_k: int = 10
    out: str = "out"
    delimiter: str | None = None


_CONFIG_KEYS = set(ExperimentConfig.__dataclass_fields__)


def estimate_tensor_bytes(dims, bytes_per_value: int) -> int:
    """Exact byte count of a dense tensor with the given dimensions."""
    dims = [int(d) for d in dims]
    if not dims:
        raise ValueError("need at least one dimension")
    if any(d <= 0 for d in dims) or bytes_per_value <= 0:
        raise ValueError("dimensions and bytes_per_value must be positive")
    total = bytes_per_value
    for d in dims:
        total *= d
    return total


def estimate_matmat_bytes(k: int, num_records: int,
                          bytes_per_value: int) -> int:
    """Bytes to store one k-by-k target per observed record."""
    if k <= 0 or num_records <= 0 or bytes_per_value <= 0:
        raise ValueError("k, num_records, and bytes_per_value must be "
                         "positive")
    return k * k * num_records * bytes_per_value


_BINARY_UNITS = ("bytes", "KB", "MB", "GB", "TB", "PB", "EB", "ZB", "YB")


def format_bytes_binary(n: int) -> str:
    """Human-readable size using 1024-based units, one decimal place."""
    if n < 0:
        raise ValueError("byte count must be non-negative")
    if n < 1024:
        return f"{n} bytes"
    unit = 1
    while unit + 1 < len(_BINARY_UNITS) and n >= 1024 ** (unit + 1):
        unit += 1
    return f"{n / 1024 ** unit:.1f} {_BINARY_UNITS[unit]}"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--dataset", help="rating data file")
    p.add_argument("--schema", help="schema JSON (default: bundled "
                                    "LDOS-CoMoDa layout)")
    p.add_argument("--delimiter", help="column delimiter (default: "
                                       "auto-detect)")
    p.add_argument("--lr-grid", help="comma-separated learning rates")
    p.add_argument("--epochs", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--l2-lambda", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--seed", type=int, help="model init and shuffle seed")
    p.add_argument("--split-seed", type=int, help="train/test split seed")
    p.add_argument("--top-k", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moviemat",
                     description="Context-aware matrix-fitting recommender "
                                 "experiments")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_train = sub.add_parser("train", help="grid search one variant and "
                                           "save the best model")
    _add_experiment_flags(p_train)
    p_train.add_argument("--variant", choices=VARIANT_NAMES)

    p_cmp = sub.add_parser("compare", help="grid search several variants "
                                           "on one split")
    _add_experiment_flags(p_cmp)
    p_cmp.add_argument("--variants", help="comma-separated variant names "
                                          "(at least 2)")

    p_pred = sub.add_parser("predict", help="query a saved model")
    p_pred.add_argument("--model", required=True, help="model JSON artifact")
    p_pred.add_argument("--user", required=True)
    p_pred.add_argument("--item", required=True)

    p_sto = sub.add_parser("storage-estimate",
                           help="bytes needed by a context tensor vs "
                                "per-record targets")
    p_sto.add_argument("mode", choices=("tensor", "matmat"))
    p_sto.add_argument("--dims", help="comma-separated tensor dimensions")
    p_sto.add_argument("--k", type=int, help="target size (matmat mode)")
    p_sto.add_argument("--records", type=int,
                       help="observed record count (matmat mode)")
    p_sto.add_argument("--bytes-per-value", type=int, default=8)

    p_stats = sub.add_parser("stats", help="dataset summary as JSON")
    _add_experiment_flags(p_stats)
    return parser


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated number list, "
                          f"got {text!r}") from None
    if not values:
        raise ConfigError(f"{what} is empty")
    return values


def _load_config_file(path: str) -> dict:
    p = Path(path)
    try:
        obj = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {p} must hold a JSON object")
    unknown = sorted(set(obj) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return obj


def _experiment_config(args) -> ExperimentConfig:
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    if "lr_grid" in merged:
        merged["lr_grid"] = tuple(float(x) for x in merged["lr_grid"])
    if "variants" in merged:
        merged["variants"] = tuple(str(v) for v in merged["variants"])

    direct = ("dataset", "schema", "delimiter", "epochs", "seed",
              "split_seed", "top_k", "out", "variant")
    for key in direct:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "latent_dim", None) is not None:
        merged["latent_dim"] = args.latent_dim
    if getattr(args, "l2_lambda", None) is not None:
        merged["l2_lambda"] = args.l2_lambda
    if getattr(args, "test_fraction", None) is not None:
        merged["test_fraction"] = args.test_fraction
    if getattr(args, "lr_grid", None) is not None:
        merged["lr_grid"] = _parse_float_list(args.lr_grid, "--lr-grid")
    if getattr(args, "variants", None) is not None:
        merged["variants"] = tuple(
            v.strip() for v in args.variants.split(",") if v.strip())

    if not merged.get("dataset"):
        raise ConfigError("no dataset path given (use --dataset or a "
                          "config file)")
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _load_experiment_dataset(cfg: ExperimentConfig) -> Dataset:
    schema = load_schema(cfg.schema) if cfg.schema \
        else default_comoda_schema()
    return load_dataset(cfg.dataset, schema, delimiter=cfg.delimiter)


def _base_train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.lr_grid[0], epochs=cfg.epochs,
                       l2_lambda=cfg.l2_lambda, seed=cfg.seed)


def _protocol_dict(cfg: ExperimentConfig) -> dict:
    return {
        "split": "record-level holdout",
        "test_fraction": cfg.test_fraction,
        "split_seed": cfg.split_seed,
        "model_seed": cfg.seed,
        "latent_dim": cfg.latent_dim,
        "epochs": cfg.epochs,
        "l2_lambda": cfg.l2_lambda,
        "top_k": cfg.top_k,
        "candidate_set": "all items except the user's training items",
        "tie_breaking": "smaller item index wins score ties",
        "dme_formula": _DME_FORMULA,
    }


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_model_artifact(model: FactorModel, ds: Dataset,
                          path: Path) -> None:
    doc = model_to_dict(model)
    doc["user_index"] = ds.user_index
    doc["item_index"] = ds.item_index
    doc["context_fields"] = [
        {"name": f.name, "min_value": f.min_value, "max_value": f.max_value}
        for f in ds.schema.fields
        if f.name in model.variant.field_names
    ]
    _write_json(path, doc)


def _grid_summary_lines(results) -> list[str]:
    lines = []
    for r in results:
        if r.metrics is None:
            lines.append(f"  lr={r.learning_rate:g}  diverged: {r.error}")
        else:
            flag = "  <- best" if r.is_best else ""
            lines.append(f"  lr={r.learning_rate:g}  "
                         f"mae={r.metrics.mae:.4f}  "
                         f"rmse={r.metrics.rmse:.4f}  "
                         f"dme={r.metrics.dme:.4f}{flag}")
    return lines


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    ds = _load_experiment_dataset(cfg)
    variant = ModelVariant.from_name(cfg.variant)
    results = grid_search(variant, ds, cfg.lr_grid, _base_train_config(cfg),
                          cfg.test_fraction, cfg.split_seed,
                          f=cfg.latent_dim, top_k=cfg.top_k)
    print(f"grid search: {cfg.variant} on {cfg.dataset} "
          f"(records={ds.num_records}, users={ds.num_users}, "
          f"items={ds.num_items})")
    for line in _grid_summary_lines(results):
        print(line)
    best = next((r for r in results if r.is_best), None)
    if best is None:
        raise DivergenceError("every grid point diverged; nothing to save")

    train_ds, _ = split_train_test(ds, cfg.test_fraction, cfg.split_seed)
    best_cfg = TrainConfig(learning_rate=best.learning_rate,
                           epochs=cfg.epochs, l2_lambda=cfg.l2_lambda,
                           seed=cfg.seed)
    model = init_model(variant, cfg.latent_dim, ds.num_users, ds.num_items,
                       seed=cfg.seed, max_rating=ds.schema.max_rating)
    trace = train(model, train_ds, best_cfg)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_model_artifact(model, ds, out / "model.json")
    write_trace_csv(out / "trace.csv", [(best.learning_rate, trace)])
    _write_json(out / "metrics.json", {
        "variant": cfg.variant,
        "learning_rate": best.learning_rate,
        "metrics": best.metrics.to_dict(),
        "grid": grid_results_to_dicts(results),
        "protocol": _protocol_dict(cfg),
    })
    print(f"best: lr={best.learning_rate:g} mae={best.metrics.mae:.4f} "
          f"rmse={best.metrics.rmse:.4f} dme={best.metrics.dme:.4f} "
          f"({trace.seconds:.1f}s)")
    print(f"wrote {out / 'model.json'}, {out / 'trace.csv'}, "
          f"{out / 'metrics.json'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _experiment_config(args)
    if len(cfg.variants) < 2:
        raise ConfigError("compare needs at least 2 variants")
    for name in cfg.variants:
        if name not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {name!r}; choose from "
                              f"{', '.join(VARIANT_NAMES)}")
    ds = _load_experiment_dataset(cfg)
    per_variant: list[tuple[str, list | None, str | None]] = []
    for name in cfg.variants:
        variant = ModelVariant.from_name(name)
        try:
            results = grid_search(variant, ds, cfg.lr_grid,
                                  _base_train_config(cfg),
                                  cfg.test_fraction, cfg.split_seed,
                                  f=cfg.latent_dim, top_k=cfg.top_k)
        except (DataError, KeyError, ValueError) as exc:
            per_variant.append((name, None, str(exc)))
        else:
            per_variant.append((name, results, None))

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_comparison_csv(out / "comparison.csv", cfg, per_variant)
    _write_figure_csv(out / "figure_data.csv", cfg, per_variant)
    for name, results, _ in per_variant:
        if results is not None:
            entries = [(r.learning_rate, r.trace) for r in results
                       if r.trace is not None]
            write_trace_csv(out / f"trace_{name}.csv", entries)

    print(f"compare on {cfg.dataset} (records={ds.num_records}, "
          f"users={ds.num_users}, items={ds.num_items})")
    for name, results, error in per_variant:
        print(f"{name}:")
        if results is None:
            print(f"  failed: {error}")
            continue
        for line in _grid_summary_lines(results):
            print(line)
    print(f"wrote {out / 'comparison.csv'}, {out / 'figure_data.csv'}")
    return EXIT_OK


def _write_comparison_csv(path: Path, cfg: ExperimentConfig,
                          per_variant) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variant", "lr", "mae", "rmse", "dme", "best",
                         "error"])
        for name, results, error in per_variant:
            if results is None:
                for lr in cfg.lr_grid:
                    writer.writerow([name, repr(float(lr)), "", "", "", "",
                                     error])
                continue
            for r in results:
                if r.metrics is None:
                    writer.writerow([name, repr(float(r.learning_rate)),
                                     "", "", "", "", r.error])
                else:
                    writer.writerow([
                        name, repr(float(r.learning_rate)),
                        repr(r.metrics.mae), repr(r.metrics.rmse),
                        repr(r.metrics.dme),
                        "1" if r.is_best else "", ""])


def _write_figure_csv(path: Path, cfg: ExperimentConfig,
                      per_variant) -> None:
    # one row per (variant, lr): exactly |grid| x |variants| data rows
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variant", "lr", "mae", "dme"])
        for name, results, _ in per_variant:
            if results is None:
                for lr in cfg.lr_grid:
                    writer.writerow([name, repr(float(lr)), "", ""])
                continue
            for r in results:
                if r.metrics is None:
                    writer.writerow([name, repr(float(r.learning_rate)),
                                     "", ""])
                else:
                    writer.writerow([name, repr(float(r.learning_rate)),
                                     repr(r.metrics.mae),
                                     repr(r.metrics.dme)])


def cmd_predict(args) -> int:
    try:
        doc = json.loads(Path(args.model).read_text())
        model = model_from_dict(doc)
    except OSError as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"invalid model artifact {args.model}: "
                        f"{exc}") from exc
    user_index = doc.get("user_index", {})
    item_index = doc.get("item_index", {})
    if args.user not in user_index:
        raise DataError(f"unknown user id {args.user!r}")
    if args.item not in item_index:
        raise DataError(f"unknown item id {args.item!r}")
    u = int(user_index[args.user])
    i = int(item_index[args.item])
    context = {}
    for entry in doc.get("context_fields", ()):
        fld = ContextField(name=entry["name"],
                           min_value=int(entry["min_value"]),
                           max_value=int(entry["max_value"]),
                           column_index=0)
        context[fld.name] = predict_context(model, u, i, fld)
    print(json.dumps({
        "user": args.user,
        "item": args.item,
        "rating": predict_rating(model, u, i),
        "context": context,
    }, indent=2))
    return EXIT_OK


def cmd_storage_estimate(args) -> int:
    if args.mode == "tensor":
        if not args.dims:
            raise ConfigError("tensor mode needs --dims")
        dims = [int(x) for x in args.dims.split(",") if x.strip()]
        total = estimate_tensor_bytes(dims, args.bytes_per_value)
    else:
        if args.k is None or args.records is None:
            raise ConfigError("matmat mode needs --k and --records")
        total = estimate_matmat_bytes(args.k, args.records,
                                      args.bytes_per_value)
    print(json.dumps({
        "mode": args.mode,
        "bytes": total,
        "human": format_bytes_binary(total),
    }, indent=2))
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _experiment_config(args)
    ds = _load_experiment_dataset(cfg)
    print(json.dumps(dataset_stats(ds).to_dict(), indent=2))
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "compare": cmd_compare,
    "predict": cmd_predict,
    "storage-estimate": cmd_storage_estimate,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


def entrypoint() -> None:
    sys.exit(main())
