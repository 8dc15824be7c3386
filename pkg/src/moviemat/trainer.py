"""Seeded SGD on the masked target-fitting loss, plus learning-rate search.

The objective is the sum over observed records of the squared residual on
unmasked target cells, optionally plus an L2 penalty on all parameters.
One SGD step updates the touched user block and item block simultaneously
from a cached residual, so the update is the exact gradient of that
record's loss term. Everything is deterministic given the seeds: record
visit order comes from one seeded generator, and the compiled kernels
accumulate in a fixed order.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba import njit

from .dataset import Dataset, split_train_test
from .metrics import MetricsReport, evaluate
from .model import FactorModel, ModelVariant, TargetMatrix, build_target, \
    init_model

__all__ = [
    "DIVERGENCE_LIMIT",
    "TrainConfig",
    "TrainTrace",
    "DivergenceError",
    "GridPointResult",
    "loss",
    "sgd_step",
    "train",
    "grid_search",
    "write_trace_csv",
    "grid_results_to_dicts",
]

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one training run.

    ``learning_rate`` may be zero (a null run that only measures loss);
    grid search requires strictly positive rates.
    """

    learning_rate: float
    epochs: int
    l2_lambda: float = 0.0
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")


@dataclass
class TrainTrace:
    """Loss after each epoch, plus the run's wall time."""

    epoch_losses: list[float]
    final_loss: float
    seconds: float


class DivergenceError(RuntimeError):
    """A parameter left the stable range during training.

    ``epoch`` and ``record_index`` are 0-based positions of the offending
    step (``record_index`` indexes the dataset's record tuple); both are
    None when the failure came from a single manual step.
    """

    def __init__(self, message: str, epoch: int | None = None,
                 record_index: int | None = None) -> None:
        super().__init__(message)
        self.epoch = epoch
        self.record_index = record_index


@dataclass
class GridPointResult:
    """Outcome of one grid-search point, in grid order."""

    learning_rate: float
    metrics: MetricsReport | None = None
    trace: TrainTrace | None = None
    error: str | None = None
    is_best: bool = False


@njit(cache=True)
def _apply_step(U, V, u, i, target, mask, lr, lam, E, Uold):
    # residual on unmasked cells, cached before any parameter moves
    f = U.shape[1]
    k = U.shape[2]
    for r in range(k):
        for c in range(k):
            if mask[r, c]:
                acc = 0.0
                for t in range(f):
                    acc += U[u, t, r] * V[i, t, c]
                E[r, c] = acc - target[r, c]
            else:
                E[r, c] = 0.0
    for t in range(f):
        for c in range(k):
            Uold[t, c] = U[u, t, c]
    for t in range(f):
        for r in range(k):
            acc = 0.0
            for c in range(k):
                acc += V[i, t, c] * E[r, c]
            U[u, t, r] = U[u, t, r] - lr * (2.0 * acc + 2.0 * lam * U[u, t, r])
    for t in range(f):
        for c in range(k):
            acc = 0.0
            for r in range(k):
                acc += Uold[t, r] * E[r, c]
            V[i, t, c] = V[i, t, c] - lr * (2.0 * acc + 2.0 * lam * V[i, t, c])
    for t in range(f):
        for c in range(k):
            x = U[u, t, c]
            if not np.isfinite(x) or abs(x) > DIVERGENCE_LIMIT:
                return False
            x = V[i, t, c]
            if not np.isfinite(x) or abs(x) > DIVERGENCE_LIMIT:
                return False
    return True


@njit(cache=True)
def _run_epoch(U, V, targets, masks, uidx, iidx, order, lr, lam, E, Uold):
    # returns the position within `order` of the first bad step, or -1
    for pos in range(order.shape[0]):
        r = order[pos]
        ok = _apply_step(U, V, uidx[r], iidx[r], targets[r], masks[r],
                         lr, lam, E, Uold)
        if not ok:
            return pos
    return -1


@njit(cache=True)
def _records_loss(U, V, targets, masks, uidx, iidx):
    f = U.shape[1]
    k = U.shape[2]
    total = 0.0
    for r in range(targets.shape[0]):
        u = uidx[r]
        i = iidx[r]
        for a in range(k):
            for b in range(k):
                if masks[r, a, b]:
                    acc = 0.0
                    for t in range(f):
                        acc += U[u, t, a] * V[i, t, b]
                    d = acc - targets[r, a, b]
                    total += d * d
    return total


@njit(cache=True)
def _sum_sq3(a):
    total = 0.0
    for i in range(a.shape[0]):
        for t in range(a.shape[1]):
            for c in range(a.shape[2]):
                total += a[i, t, c] * a[i, t, c]
    return total


def _prepare(ds: Dataset, variant: ModelVariant):
    """Targets, masks, and dense index arrays for every record."""
    n = ds.num_records
    k = variant.k
    targets = np.empty((n, k, k))
    masks = np.empty((n, k, k), dtype=np.bool_)
    uidx = np.empty(n, dtype=np.int64)
    iidx = np.empty(n, dtype=np.int64)
    for r, rec in enumerate(ds.records):
        built = build_target(rec, variant, ds.schema)
        targets[r] = built.values
        masks[r] = built.mask
        uidx[r] = ds.user_index[rec.user_id]
        iidx[r] = ds.item_index[rec.item_id]
    return targets, masks, uidx, iidx


def _check_coverage(model: FactorModel, uidx: np.ndarray,
                    iidx: np.ndarray) -> None:
    if len(uidx) == 0:
        return
    if int(uidx.max()) >= model.num_users or \
            int(iidx.max()) >= model.num_items:
        raise ValueError("dataset references users or items unknown "
                         "to the model")


def _full_loss(model: FactorModel, targets, masks, uidx, iidx,
               l2_lambda: float) -> float:
    base = _records_loss(model.user_factors, model.item_factors,
                         targets, masks, uidx, iidx)
    if l2_lambda > 0:
        base += l2_lambda * (_sum_sq3(model.user_factors)
                             + _sum_sq3(model.item_factors))
    return float(base)


def loss(model: FactorModel, ds: Dataset, l2_lambda: float = 0.0) -> float:
    """Objective value: masked squared residuals plus the L2 penalty."""
    targets, masks, uidx, iidx = _prepare(ds, model.variant)
    _check_coverage(model, uidx, iidx)
    return _full_loss(model, targets, masks, uidx, iidx, l2_lambda)


def sgd_step(model: FactorModel, user_idx: int, item_idx: int,
             target: TargetMatrix, learning_rate: float,
             l2_lambda: float = 0.0) -> None:
    """One simultaneous gradient step on a single record's target.

    Raises:
        DivergenceError: If any touched parameter becomes non-finite or
            exceeds the stable magnitude limit.
    """
    if not 0 <= user_idx < model.num_users:
        raise IndexError(f"user index {user_idx} out of range")
    if not 0 <= item_idx < model.num_items:
        raise IndexError(f"item index {item_idx} out of range")
    k = model.variant.k
    if target.values.shape != (k, k) or target.mask.shape != (k, k):
        raise ValueError(f"target must be {k}x{k}")
    E = np.empty((k, k))
    Uold = np.empty((model.f, k))
    ok = _apply_step(model.user_factors, model.item_factors,
                     user_idx, item_idx,
                     np.ascontiguousarray(target.values, dtype=np.float64),
                     np.ascontiguousarray(target.mask, dtype=np.bool_),
                     float(learning_rate), float(l2_lambda), E, Uold)
    if not ok:
        raise DivergenceError(
            f"step on user {user_idx}, item {item_idx} produced an "
            f"unstable parameter")


def train(model: FactorModel, ds: Dataset, cfg: TrainConfig) -> TrainTrace:
    """Run seeded SGD over the dataset, mutating the model in place.

    Each epoch visits every record once in an order drawn from the config
    seed (or in dataset order when shuffling is off) and records the full
    objective after the epoch.

    Raises:
        DivergenceError: With the 0-based epoch and record index of the
            first unstable step.
    """
    targets, masks, uidx, iidx = _prepare(ds, model.variant)
    _check_coverage(model, uidx, iidx)
    n = ds.num_records
    k = model.variant.k
    E = np.empty((k, k))
    Uold = np.empty((model.f, k))
    rng = np.random.default_rng(cfg.seed)
    epoch_losses: list[float] = []
    started = time.perf_counter()
    for epoch in range(cfg.epochs):
        if cfg.shuffle_each_epoch:
            order = rng.permutation(n)
        else:
            order = np.arange(n)
        bad = _run_epoch(model.user_factors, model.item_factors,
                         targets, masks, uidx, iidx, order,
                         cfg.learning_rate, cfg.l2_lambda, E, Uold)
        if bad >= 0:
            record_index = int(order[bad])
            raise DivergenceError(
                f"training diverged at epoch index {epoch}, record index "
                f"{record_index} (learning_rate={cfg.learning_rate:g})",
                epoch=epoch, record_index=record_index)
        epoch_losses.append(_full_loss(model, targets, masks, uidx, iidx,
                                       cfg.l2_lambda))
    seconds = time.perf_counter() - started
    return TrainTrace(epoch_losses, epoch_losses[-1], seconds)


def grid_search(variant: ModelVariant, ds: Dataset, lr_grid,
                base_cfg: TrainConfig, test_fraction: float,
                split_seed: int, f: int = 8,
                top_k: int = 10) -> list[GridPointResult]:
    """Train one fresh model per learning rate and evaluate on a holdout.

    All points share the same seeded split and the same seeded initial
    parameters. A diverging point is recorded with its error message and
    does not stop the sweep. Exactly one non-failed point is flagged best
    (lowest MAE, ties to the smaller rate).
    """
    lr_grid = list(lr_grid)
    if not lr_grid:
        raise ValueError("lr_grid must be non-empty")
    if any(lr <= 0 for lr in lr_grid):
        raise ValueError("grid learning rates must be positive")
    train_ds, test_ds = split_train_test(ds, test_fraction, split_seed)
    results: list[GridPointResult] = []
    for lr in lr_grid:
        cfg = replace(base_cfg, learning_rate=lr)
        model = init_model(variant, f, ds.num_users, ds.num_items,
                           seed=cfg.seed, max_rating=ds.schema.max_rating)
        try:
            trace = train(model, train_ds, cfg)
            report = evaluate(model, train_ds, test_ds, top_k=top_k)
        except DivergenceError as exc:
            results.append(GridPointResult(lr, error=str(exc)))
        else:
            results.append(GridPointResult(lr, metrics=report, trace=trace))
    _flag_best(results)
    return results


def _flag_best(results: list[GridPointResult]) -> None:
    best = None
    for r in results:
        if r.metrics is None:
            continue
        if best is None or (r.metrics.mae, r.learning_rate) < \
                (best.metrics.mae, best.learning_rate):
            best = r
    if best is not None:
        best.is_best = True


def write_trace_csv(path: str | Path, entries) -> None:
    """Write (lr, trace) pairs as CSV rows ``lr,epoch,loss``.

    Epochs are numbered from 1. Floats are written with ``repr`` so the
    file re-parses to the exact same values.
    """
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["lr", "epoch", "loss"])
        for lr, trace in entries:
            for epoch, value in enumerate(trace.epoch_losses, start=1):
                writer.writerow([repr(float(lr)), epoch, repr(float(value))])


def grid_results_to_dicts(results: list[GridPointResult]) -> list[dict]:
    """JSON-ready summaries of grid results, in grid order."""
    rows = []
    for r in results:
        row: dict = {"learning_rate": r.learning_rate, "is_best": r.is_best}
        if r.metrics is not None:
            row.update(mae=r.metrics.mae, rmse=r.metrics.rmse,
                       dme=r.metrics.dme)
        if r.trace is not None:
            row.update(final_loss=r.trace.final_loss,
                       epochs=len(r.trace.epoch_losses))
        if r.error is not None:
            row["error"] = r.error
        rows.append(row)
    return rows
