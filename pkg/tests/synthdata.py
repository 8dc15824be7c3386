"""Synthetic rating data whose targets a factor model can fit exactly.

The hidden true model uses one positive base vector per user and per item;
column c of an entity's f-by-k factor block is that base vector cyclically
shifted by c. Any diagonal entry of U_i^T V_j then equals the plain dot
product of the two base vectors, so the generated target has the constant
diagonal the model family requires, while off-diagonal cells vary and act
as informative context.

Base entries are drawn from [0.55/sqrt(f), 1/sqrt(f)], which keeps every
target cell in [0.3025, 1.0] and every rating in [1.5125, 5] for
max_rating 5. Context cells are quantized to an integer grid (resolution
steps), so targets stay representable up to the quantization error.
"""

from __future__ import annotations

import numpy as np

from moviemat import ContextField, ContextSchema, Dataset, RatingRecord, \
    dataset_from_records

FIELDS_BY_K = {
    1: (),
    2: ("location", "mood"),
    3: ("daytype", "season", "weather", "location", "emotion", "mood"),
}

# off-diagonal cells in the order their field names are listed above
CELLS_BY_K = {
    1: (),
    2: ((0, 1), (1, 0)),
    3: ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)),
}


def true_factors(m: int, n: int, f: int, k: int, rng) -> tuple:
    lo = 0.55 / np.sqrt(f)
    hi = 1.0 / np.sqrt(f)
    user_base = rng.uniform(lo, hi, (m, f))
    item_base = rng.uniform(lo, hi, (n, f))
    U = np.stack([np.roll(user_base, -c, axis=1) for c in range(k)], axis=2)
    V = np.stack([np.roll(item_base, -c, axis=1) for c in range(k)], axis=2)
    return U, V


def synthetic_schema(k: int, resolution: int = 10000,
                     max_rating: float = 5.0) -> ContextSchema:
    names = FIELDS_BY_K[k]
    fields = tuple(ContextField(name, 1, resolution, 3 + i)
                   for i, name in enumerate(names))
    return ContextSchema(fields, user_column=0, item_column=1,
                         rating_column=2, max_rating=max_rating)


def synthetic_dataset(m: int, n: int, f: int, k: int, num_records: int,
                      seed: int, noise: float = 0.0,
                      resolution: int = 10000,
                      max_rating: float = 5.0) -> Dataset:
    """Records sampled without replacement from a hidden true model.

    ``noise`` is the standard deviation of gaussian noise added to the
    observed rating (the context cells stay exact, so context carries
    clean signal about the latent factors).
    """
    if num_records > m * n:
        raise ValueError("more records requested than user-item pairs")
    rng = np.random.default_rng(seed)
    U, V = true_factors(m, n, f, k, rng)
    schema = synthetic_schema(k, resolution, max_rating)
    names = FIELDS_BY_K[k]
    cells = CELLS_BY_K[k]
    pairs = rng.choice(m * n, size=num_records, replace=False)
    records = []
    for p in pairs:
        u, j = divmod(int(p), n)
        target = np.einsum("fa,fb->ab", U[u], V[j])
        rating = float(target[0, 0] * max_rating)
        if noise > 0:
            rating += noise * float(rng.standard_normal())
        rating = min(max(rating, 1.0), max_rating)
        context = {}
        for name, cell in zip(names, cells):
            quantized = int(round(float(target[cell]) * resolution))
            context[name] = min(max(quantized, 1), resolution)
        records.append(RatingRecord(str(u), str(j), rating, context))
    return dataset_from_records(records, schema)


def write_dataset_csv(path, ds: Dataset, delimiter: str = ",") -> None:
    """Write a dataset as delimited text laid out per its schema columns."""
    schema = ds.schema
    width = schema.max_column + 1
    lines = []
    for rec in ds.records:
        row = ["0"] * width
        row[schema.user_column] = rec.user_id
        row[schema.item_column] = rec.item_id
        row[schema.rating_column] = repr(rec.rating)
        for f in schema.fields:
            value = rec.context.get(f.name, schema.missing_sentinel)
            row[f.column_index] = str(value)
        lines.append(delimiter.join(row))
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")


def exact_fit_instance(m=4, n=5, f=3, seed=7):
    """A k=1 model plus records its predictions already fit exactly.

    max_rating is a power of two, so rating/max_rating reproduces the
    underlying dot product bitwise and the training loss is exactly zero.
    """
    from moviemat import ModelVariant, init_model
    max_rating = 4.0
    rng = np.random.default_rng(seed)
    variant = ModelVariant.classic_mf()
    model = init_model(variant, f, m, n, seed=seed, max_rating=max_rating)
    model.user_factors[:] = rng.uniform(0.3, 0.45, (m, f, 1))
    model.item_factors[:] = rng.uniform(0.3, 0.45, (n, f, 1))
    records = []
    for u in range(m):
        for i in range(n):
            acc = 0.0
            for t in range(f):
                acc += model.user_factors[u, t, 0] * \
                    model.item_factors[i, t, 0]
            records.append(RatingRecord(str(u), str(i), acc * max_rating,
                                        {}))
    schema = synthetic_schema(k=1, max_rating=max_rating)
    return model, dataset_from_records(records, schema)


class ScalarMF:
    """Independent scalar classic-MF trainer used as a bitwise oracle.

    Re-implements k=1 training with per-entry scalar arithmetic, mirroring
    the production kernel's expression tree exactly: the prediction
    accumulates u[t]*v[t] in index order, the user vector is cached before
    its update, and both updates use ``x - lr*(2.0*a + 2.0*lam*x)``.
    """

    def __init__(self, f: int, m: int, n: int, seed: int):
        scale = 1.0 / np.sqrt(f)
        rng = np.random.default_rng(seed)
        self.f = f
        self.U = rng.uniform(0.0, scale, (m, f, 1))[:, :, 0].copy()
        self.V = rng.uniform(0.0, scale, (n, f, 1))[:, :, 0].copy()

    def step(self, u: int, i: int, target: float, lr: float,
             lam: float) -> None:
        acc = 0.0
        for t in range(self.f):
            acc += self.U[u, t] * self.V[i, t]
        e = acc - target
        u_old = self.U[u].copy()
        for t in range(self.f):
            self.U[u, t] = self.U[u, t] - lr * (2.0 * (self.V[i, t] * e)
                                                + 2.0 * lam * self.U[u, t])
        for t in range(self.f):
            self.V[i, t] = self.V[i, t] - lr * (2.0 * (u_old[t] * e)
                                                + 2.0 * lam * self.V[i, t])

    def loss(self, uidx, iidx, targets) -> float:
        total = 0.0
        for r in range(len(targets)):
            acc = 0.0
            for t in range(self.f):
                acc += self.U[uidx[r], t] * self.V[iidx[r], t]
            d = acc - targets[r]
            total += d * d
        return total

    def run_epoch(self, uidx, iidx, targets, order, lr: float,
                  lam: float) -> None:
        for pos in order:
            self.step(uidx[pos], iidx[pos], targets[pos], lr, lam)


def write_schema_json(path, schema: ContextSchema) -> None:
    import json
    doc = {
        "user_column": schema.user_column,
        "item_column": schema.item_column,
        "rating_column": schema.rating_column,
        "max_rating": schema.max_rating,
        "missing_sentinel": schema.missing_sentinel,
        "fields": [
            {"name": f.name, "min_value": f.min_value,
             "max_value": f.max_value, "column_index": f.column_index}
            for f in schema.fields
        ],
    }
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")
