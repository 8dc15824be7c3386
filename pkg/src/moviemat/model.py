"""Target construction, latent factor parameters, and prediction.

Each observed rating becomes a small k-by-k target matrix: the normalized
rating replicated down the diagonal, normalized context values in the
off-diagonal cells. A model holds one f-by-k parameter block per user and
per item; the block product ``U_i^T V_j`` is the predicted target, from
which ratings and context values are read back out.

Variants: ``classic`` (k=1, no context), ``moviemat`` (k=2, location and
mood), ``moviemat-plus`` (k=3, daytype, season, weather, location, emotion,
mood).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ContextField, ContextSchema, RatingRecord
from .linalg import matmul_transpose_left

__all__ = [
    "ModelVariant",
    "TargetMatrix",
    "FactorModel",
    "VARIANT_NAMES",
    "build_target",
    "init_model",
    "predict_target",
    "predict_rating",
    "predict_context",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

MODEL_FORMAT = "moviemat-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelVariant:
    """Target size and the context field occupying each off-diagonal cell."""

    kind: str
    k: int
    context_layout: dict[tuple[int, int], str]

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        cells = set(self.context_layout)
        expected = {(r, c) for r in range(self.k) for c in range(self.k)
                    if r != c}
        if cells != expected:
            raise ValueError(
                f"layout must map every off-diagonal cell of a "
                f"{self.k}x{self.k} matrix exactly once; "
                f"got {sorted(cells)}, need {sorted(expected)}")

    @property
    def field_names(self) -> tuple[str, ...]:
        """Layout field names in row-major cell order."""
        return tuple(self.context_layout[cell]
                     for cell in sorted(self.context_layout))

    def cell_of(self, field_name: str) -> tuple[int, int]:
        for cell, name in self.context_layout.items():
            if name == field_name:
                return cell
        raise KeyError(f"field {field_name!r} is not in the "
                       f"{self.kind} layout")

    @staticmethod
    def classic_mf() -> "ModelVariant":
        return ModelVariant("classic", 1, {})

    @staticmethod
    def moviemat() -> "ModelVariant":
        return ModelVariant("moviemat", 2, {(0, 1): "location",
                                            (1, 0): "mood"})

    @staticmethod
    def moviemat_plus() -> "ModelVariant":
        return ModelVariant("moviemat-plus", 3, {
            (0, 1): "daytype",
            (0, 2): "season",
            (1, 0): "weather",
            (1, 2): "location",
            (2, 0): "emotion",
            (2, 1): "mood",
        })

    @staticmethod
    def from_name(name: str) -> "ModelVariant":
        try:
            return _VARIANT_FACTORIES[name]()
        except KeyError:
            raise ValueError(
                f"unknown variant {name!r}; choose from "
                f"{', '.join(VARIANT_NAMES)}") from None


_VARIANT_FACTORIES = {
    "classic": ModelVariant.classic_mf,
    "moviemat": ModelVariant.moviemat,
    "moviemat-plus": ModelVariant.moviemat_plus,
}
VARIANT_NAMES = tuple(_VARIANT_FACTORIES)


@dataclass
class TargetMatrix:
    """A k-by-k fit target; masked-off cells carry no loss."""

    values: np.ndarray
    mask: np.ndarray


@dataclass
class FactorModel:
    """Per-user and per-item f-by-k parameter blocks.

    ``user_factors`` has shape (m, f, k) and ``item_factors`` (n, f, k);
    block ``user_factors[i]`` is the f-by-k matrix for dense user index i.
    """

    variant: ModelVariant
    f: int
    user_factors: np.ndarray
    item_factors: np.ndarray
    max_rating: float

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def parameter_count(self) -> int:
        return int(self.user_factors.size + self.item_factors.size)


def build_target(record: RatingRecord, variant: ModelVariant,
                 schema: ContextSchema) -> TargetMatrix:
    """Construct the k-by-k target for one record.

    The normalized rating fills the diagonal; each off-diagonal cell gets
    its context value divided by the field maximum, or a masked zero when
    the record lacks that field.

    Raises:
        KeyError: If the layout names a field missing from the schema.
    """
    k = variant.k
    values = np.zeros((k, k))
    mask = np.ones((k, k), dtype=np.bool_)
    normalized_rating = record.rating / schema.max_rating
    for d in range(k):
        values[d, d] = normalized_rating
    for cell, name in variant.context_layout.items():
        f = schema.field_by_name(name)
        raw = record.context.get(name)
        if raw is None:
            mask[cell] = False
        else:
            values[cell] = raw / f.max_value
    return TargetMatrix(values, mask)


def init_model(variant: ModelVariant, f: int, m: int, n: int, seed: int,
               max_rating: float) -> FactorModel:
    """Draw every parameter uniform on [0, 1/sqrt(f)] from one seeded rng.

    User blocks are drawn before item blocks, so the layout of draws is
    part of the reproducibility contract.
    """
    if f < 1 or m < 1 or n < 1:
        raise ValueError("f, m, and n must all be at least 1")
    scale = 1.0 / np.sqrt(f)
    rng = np.random.default_rng(seed)
    user_factors = rng.uniform(0.0, scale, size=(m, f, variant.k))
    item_factors = rng.uniform(0.0, scale, size=(n, f, variant.k))
    return FactorModel(variant, f, user_factors, item_factors,
                       float(max_rating))


def _check_indices(model: FactorModel, user_idx: int, item_idx: int) -> None:
    if not 0 <= user_idx < model.num_users:
        raise IndexError(f"user index {user_idx} out of range "
                         f"[0, {model.num_users})")
    if not 0 <= item_idx < model.num_items:
        raise IndexError(f"item index {item_idx} out of range "
                         f"[0, {model.num_items})")


def predict_target(model: FactorModel, user_idx: int,
                   item_idx: int) -> np.ndarray:
    """The k-by-k predicted target ``U_i^T V_j``."""
    _check_indices(model, user_idx, item_idx)
    return matmul_transpose_left(model.user_factors[user_idx],
                                 model.item_factors[item_idx])


def predict_rating(model: FactorModel, user_idx: int, item_idx: int) -> float:
    """Mean predicted-target diagonal, rescaled and clamped to [1, max]."""
    predicted = predict_target(model, user_idx, item_idx)
    total = 0.0
    for d in range(model.variant.k):
        total += predicted[d, d]
    rating = (total / model.variant.k) * model.max_rating
    return min(max(rating, 1.0), model.max_rating)


def predict_context(model: FactorModel, user_idx: int, item_idx: int,
                    field: ContextField) -> float:
    """Estimated context value for one of the model's layout fields.

    Reads the field's off-diagonal cell from the predicted target, undoes
    the normalization, and clamps into the field's declared range.

    Raises:
        KeyError: If the field is not part of the variant layout.
    """
    cell = model.variant.cell_of(field.name)
    predicted = predict_target(model, user_idx, item_idx)
    value = predicted[cell] * field.max_value
    return min(max(value, float(field.min_value)), float(field.max_value))


def model_to_dict(model: FactorModel) -> dict:
    """Plain-JSON form of a model; floats keep full precision."""
    layout = {f"{r},{c}": name
              for (r, c), name in sorted(model.variant.context_layout.items())}
    return {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "variant": model.variant.kind,
        "k": model.variant.k,
        "f": model.f,
        "max_rating": model.max_rating,
        "context_layout": layout,
        "user_factors": model.user_factors.tolist(),
        "item_factors": model.item_factors.tolist(),
    }


def model_from_dict(doc: dict) -> FactorModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a model document")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version "
                         f"{doc.get('format_version')!r}")
    layout = {tuple(int(x) for x in key.split(",")): name
              for key, name in doc["context_layout"].items()}
    variant = ModelVariant(doc["variant"], int(doc["k"]), layout)
    user_factors = np.asarray(doc["user_factors"], dtype=np.float64)
    item_factors = np.asarray(doc["item_factors"], dtype=np.float64)
    f = int(doc["f"])
    for name, a in (("user_factors", user_factors),
                    ("item_factors", item_factors)):
        if a.ndim != 3 or a.shape[1:] != (f, variant.k):
            raise ValueError(f"{name} has shape {a.shape}, expected "
                             f"(*, {f}, {variant.k})")
    return FactorModel(variant, f, user_factors, item_factors,
                       float(doc["max_rating"]))


def save_model(model: FactorModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path: str | Path) -> FactorModel:
    return model_from_dict(json.loads(Path(path).read_text()))
