"""Accuracy and exposure-fairness evaluation.

MAE and RMSE score clamped rating predictions on held-out records. The
degree of Matthew effect (DME) measures how strongly top-k recommendation
exposure concentrates on already-popular items: items are ranked by
training popularity, per-item recommendation frequencies are collected
over the evaluation users, and DME is the negative slope of the least
squares line through (ln popularity_rank, ln frequency) over items that
were recommended at all. Zero means exposure independent of popularity;
larger positive values mean stronger rich-get-richer concentration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dataset import Dataset
from .model import FactorModel, predict_rating

__all__ = [
    "MetricsReport",
    "mae",
    "rmse",
    "degree_of_matthew_effect",
    "evaluate",
]


@dataclass
class MetricsReport:
    """Evaluation summary over one test split."""

    mae: float
    rmse: float
    dme: float
    top_k: int
    n_eval: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "dme": self.dme,
                "top_k": self.top_k, "n_eval": self.n_eval}


def _paired(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"need two equal-length 1-D sequences, "
                         f"got shapes {p.shape} and {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return p, t


def mae(pred, truth) -> float:
    """Mean absolute error between paired sequences."""
    p, t = _paired(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    """Root-mean-square error between paired sequences."""
    p, t = _paired(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


@njit(cache=True)
def _score_items(user_block, V, max_rating, out):
    # clamped predicted rating for every item, same arithmetic as
    # predict_rating: mean of the predicted-target diagonal, rescaled
    n, f, k = V.shape
    for j in range(n):
        s = 0.0
        for c in range(k):
            acc = 0.0
            for t in range(f):
                acc += user_block[t, c] * V[j, t, c]
            s += acc
        value = (s / k) * max_rating
        if value < 1.0:
            value = 1.0
        elif value > max_rating:
            value = max_rating
        out[j] = value
    return out


def _train_item_counts(train: Dataset, num_items: int) -> np.ndarray:
    counts = np.zeros(num_items, dtype=np.int64)
    for rec in train.records:
        idx = train.item_index[rec.item_id]
        if idx >= num_items:
            raise ValueError("training data references items unknown "
                             "to the model")
        counts[idx] += 1
    return counts


def _trained_items_by_user(train: Dataset) -> dict[int, set[int]]:
    seen: dict[int, set[int]] = {}
    for rec in train.records:
        u = train.user_index[rec.user_id]
        seen.setdefault(u, set()).add(train.item_index[rec.item_id])
    return seen


def _recommendation_counts(scores: np.ndarray, excluded: np.ndarray,
                           top_k: int) -> np.ndarray:
    """Per-item top-k frequencies over rows of a score matrix.

    ``excluded`` marks (user, item) cells that may not be recommended.
    Ranking is by descending score with ties broken toward the smaller
    item index; users with fewer than ``top_k`` candidates contribute all
    of them.
    """
    n_users, n_items = scores.shape
    counts = np.zeros(n_items, dtype=np.int64)
    for row in range(n_users):
        masked = scores[row].copy()
        masked[excluded[row]] = -np.inf
        k_eff = min(top_k, n_items - int(excluded[row].sum()))
        if k_eff <= 0:
            continue
        order = np.argsort(-masked, kind="stable")
        counts[order[:k_eff]] += 1
    return counts


def _dme_from_counts(rec_counts: np.ndarray,
                     train_counts: np.ndarray) -> float:
    """Negative log-log regression slope of frequency against rank."""
    n = len(train_counts)
    pop_order = np.argsort(-train_counts, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[pop_order] = np.arange(1, n + 1)
    positive = rec_counts > 0
    if int(positive.sum()) < 2:
        raise ValueError("fewer than 2 items received recommendations; "
                         "the popularity slope is undefined")
    x = np.log(rank[positive].astype(np.float64))
    y = np.log(rec_counts[positive].astype(np.float64))
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


def _dme_from_scores(scores: np.ndarray, excluded: np.ndarray,
                     train_counts: np.ndarray, top_k: int) -> float:
    return _dme_from_counts(_recommendation_counts(scores, excluded, top_k),
                            train_counts)


def degree_of_matthew_effect(model: FactorModel, train: Dataset,
                             eval_users, top_k: int = 10) -> float:
    """DME of the model's top-k recommendations for the given users.

    Candidates for each user are all items minus the user's training
    items. Items are ranked by clamped predicted rating, ties toward the
    smaller index; popularity rank 1 is the most-rated training item.

    Raises:
        ValueError: If ``top_k`` < 1, a user index is out of range, or
            fewer than 2 items end up recommended.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    users = [int(u) for u in eval_users]
    if any(not 0 <= u < model.num_users for u in users):
        raise ValueError("eval user index out of range")
    n = model.num_items
    train_counts = _train_item_counts(train, n)
    trained = _trained_items_by_user(train)
    scores = np.empty((len(users), n))
    excluded = np.zeros((len(users), n), dtype=np.bool_)
    for row, u in enumerate(users):
        _score_items(model.user_factors[u], model.item_factors,
                     model.max_rating, scores[row])
        for item in trained.get(u, ()):
            excluded[row, item] = True
    return _dme_from_scores(scores, excluded, train_counts, top_k)


def evaluate(model: FactorModel, train: Dataset, test: Dataset,
             top_k: int = 10) -> MetricsReport:
    """MAE/RMSE on the test records plus DME over the test users.

    Both splits must share the parent dataset's index maps, so every test
    user and item resolves to a model index.
    """
    if test.num_records == 0:
        raise ValueError("empty test split")
    preds = np.empty(test.num_records)
    truths = np.empty(test.num_records)
    for pos, rec in enumerate(test.records):
        u = test.user_index[rec.user_id]
        i = test.item_index[rec.item_id]
        preds[pos] = predict_rating(model, u, i)
        truths[pos] = rec.rating
    eval_users = sorted({test.user_index[r.user_id] for r in test.records})
    dme = degree_of_matthew_effect(model, train, eval_users, top_k=top_k)
    return MetricsReport(mae=mae(preds, truths), rmse=rmse(preds, truths),
                         dme=dme, top_k=top_k, n_eval=test.num_records)
