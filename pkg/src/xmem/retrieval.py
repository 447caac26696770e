"""Retrieval protocol: rank candidates by L2 distance in both directions
over sampled query subsets, compute median rank and recall at K, aggregate
across subsets. Also the plain-text embedding interchange format and a
linear probe measuring how separable the two modalities' penultimate
features are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetFormatError, DimensionError
from .model import ModelParams, embed_batch

RECALL_KS = (1, 5, 10)


@dataclass
class RankResult:
    query_id: str
    truth_id: str
    rank: int


@dataclass
class RetrievalReport:
    direction: str  # "im2rec" or "rec2im"
    subset_size: int
    per_subset_medr: list[float]
    per_subset_recall: dict[int, list[float]]  # K -> percent per subset

    @property
    def medr_mean(self) -> float:
        return float(np.mean(self.per_subset_medr))

    @property
    def medr_std(self) -> float:
        return float(np.std(self.per_subset_medr))

    def recall(self, k: int) -> float:
        return float(np.mean(self.per_subset_recall[k]))

    def validate(self) -> None:
        r1, r5, r10 = (self.recall(k) for k in RECALL_KS)
        if not (r1 <= r5 + 1e-9 and r5 <= r10 + 1e-9 and r10 <= 100.0 + 1e-9):
            raise ValueError(f"recall ordering violated: {r1}, {r5}, {r10}")
        if self.medr_mean < 1.0:
            raise ValueError(f"median rank below 1: {self.medr_mean}")


def _squared_distances(query: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    diff = candidates - query
    return (diff * diff).sum(axis=1)


def rank_one(query_emb: np.ndarray, candidates: np.ndarray, truth_index: int) -> int:
    """1-based rank of the ground-truth candidate under L2 distance.

    Ties are broken pessimistically by candidate index: an equal-distance
    candidate listed before the truth counts ahead of it.
    """
    candidates = np.asarray(candidates)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise DimensionError("rank_one needs a non-empty 2-D candidate matrix")
    if not 0 <= truth_index < candidates.shape[0]:
        raise IndexError(f"truth index {truth_index} outside candidate set of {candidates.shape[0]}")
    d = _squared_distances(np.asarray(query_emb), candidates)
    dt = d[truth_index]
    closer = int((d < dt).sum())
    tied_before = int((d[:truth_index] == dt).sum())
    return 1 + closer + tied_before


def sample_subsets(n_pairs: int, subset_size: int, n_subsets: int, seed: int) -> list[np.ndarray]:
    """Independent uniform without-replacement draws, deterministic by seed."""
    if subset_size > n_pairs:
        raise ConfigError(f"subset_size {subset_size} exceeds the {n_pairs} available pairs")
    if subset_size < 1 or n_subsets < 1:
        raise ConfigError("subset_size and n_subsets must be positive")
    rng = np.random.default_rng(seed)
    return [rng.choice(n_pairs, size=subset_size, replace=False) for _ in range(n_subsets)]


def _direction_report(
    queries: np.ndarray, candidates: np.ndarray, subsets: list[np.ndarray], direction: str
) -> RetrievalReport:
    medrs = []
    recalls: dict[int, list[float]] = {k: [] for k in RECALL_KS}
    for subset in subsets:
        q = queries[subset]
        c = candidates[subset]
        ranks = np.array([rank_one(q[i], c, i) for i in range(len(subset))])
        medrs.append(float(np.median(ranks)))
        for k in RECALL_KS:
            recalls[k].append(float((ranks <= k).mean() * 100.0))
    report = RetrievalReport(direction, len(subsets[0]), medrs, recalls)
    report.validate()
    return report


def evaluate_embeddings(
    image_emb: np.ndarray,
    recipe_emb: np.ndarray,
    subset_size: int,
    n_subsets: int,
    seed: int,
) -> tuple[RetrievalReport, RetrievalReport]:
    """The full protocol on aligned embedding matrices (row i of each is a
    pair). Returns (im2rec, rec2im) reports."""
    image_emb = np.asarray(image_emb)
    recipe_emb = np.asarray(recipe_emb)
    if image_emb.shape != recipe_emb.shape:
        raise DimensionError(
            f"embedding shapes differ between modalities: {image_emb.shape} vs {recipe_emb.shape}"
        )
    subsets = sample_subsets(image_emb.shape[0], subset_size, n_subsets, seed)
    im2rec = _direction_report(image_emb, recipe_emb, subsets, "im2rec")
    rec2im = _direction_report(recipe_emb, image_emb, subsets, "rec2im")
    return im2rec, rec2im


class _FeaturePairs:
    def __init__(self, image_feats, recipe_feats):
        self.image_feats = image_feats
        self.recipe_feats = recipe_feats


def embed_pairs(params: ModelParams, image_feats: np.ndarray, recipe_feats: np.ndarray, chunk: int = 256):
    """Final embeddings (and penultimate features) for aligned feature rows."""
    v_pen, r_pen, v_fin, r_fin = [], [], [], []
    for start in range(0, len(image_feats), chunk):
        emb, _ = embed_batch(
            params,
            _FeaturePairs(image_feats[start : start + chunk], recipe_feats[start : start + chunk]),
        )
        v_pen.append(emb.v_pen)
        r_pen.append(emb.r_pen)
        v_fin.append(emb.v_final)
        r_fin.append(emb.r_final)
    return (
        np.concatenate(v_pen),
        np.concatenate(r_pen),
        np.concatenate(v_fin),
        np.concatenate(r_fin),
    )


def evaluate_model(
    params: ModelParams,
    dataset,
    split: str,
    subset_size: int,
    n_subsets: int,
    seed: int,
):
    """Embed one dataset split (one designated image per recipe) and run the
    protocol. Returns (ids, im2rec report, rec2im report)."""
    from .data import eval_pairs  # local import to keep module deps one-way

    records = dataset.split_records(split)
    if not records:
        raise ConfigError(f"split {split!r} has no records")
    ids, img, rcp = eval_pairs(dataset, records, params.dtype)
    _, _, v_fin, r_fin = embed_pairs(params, img, rcp)
    im2rec, rec2im = evaluate_embeddings(v_fin, r_fin, subset_size, n_subsets, seed)
    return ids, im2rec, rec2im


# --- report CSV -------------------------------------------------------------

REPORT_HEADER = "direction,subset_size,subset,medr_mean,medr_std,r_at_1,r_at_5,r_at_10"


def write_report(reports: list[RetrievalReport], path) -> None:
    """Aggregate row (subset="all") plus one row per subset, per direction.
    Numbers are written with full round-trip precision."""
    lines = [REPORT_HEADER]
    for rep in reports:
        lines.append(
            f"{rep.direction},{rep.subset_size},all,{rep.medr_mean!r},{rep.medr_std!r},"
            f"{rep.recall(1)!r},{rep.recall(5)!r},{rep.recall(10)!r}"
        )
        for i, medr in enumerate(rep.per_subset_medr):
            r1 = rep.per_subset_recall[1][i]
            r5 = rep.per_subset_recall[5][i]
            r10 = rep.per_subset_recall[10][i]
            lines.append(f"{rep.direction},{rep.subset_size},{i},{medr!r},,{r1!r},{r5!r},{r10!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> list[RetrievalReport]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != REPORT_HEADER:
        raise DatasetFormatError(f"{path}: not a retrieval report (bad header)")
    reports: dict[str, RetrievalReport] = {}
    aggregates: dict[str, tuple] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise DatasetFormatError(f"{path}: malformed report row {ln!r}")
        direction, subset_size, subset = parts[0], int(parts[1]), parts[2]
        if subset == "all":
            aggregates[direction] = tuple(float(x) for x in parts[3:])
            reports.setdefault(
                direction,
                RetrievalReport(direction, subset_size, [], {k: [] for k in RECALL_KS}),
            )
        else:
            rep = reports[direction]
            rep.per_subset_medr.append(float(parts[3]))
            rep.per_subset_recall[1].append(float(parts[5]))
            rep.per_subset_recall[5].append(float(parts[6]))
            rep.per_subset_recall[10].append(float(parts[7]))
    for direction, agg in aggregates.items():
        rep = reports[direction]
        got = (rep.medr_mean, rep.medr_std, rep.recall(1), rep.recall(5), rep.recall(10))
        if any(abs(a - b) > 1e-9 for a, b in zip(agg, got)):
            raise DatasetFormatError(
                f"{path}: aggregate row for {direction} does not match per-subset rows"
            )
    return list(reports.values())


# --- embedding interchange ---------------------------------------------------

EMBEDDING_HEADER = "id,modality,dim,values..."


def write_embeddings(path, ids: list[str], image_emb: np.ndarray, recipe_emb: np.ndarray) -> None:
    """Plain-text interchange file for eval-only runs: one row per item,
    pair members share their id across the two modalities."""
    dim = image_emb.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EMBEDDING_HEADER + "\n")
        for modality, emb in (("image", image_emb), ("recipe", recipe_emb)):
            for pid, row in zip(ids, emb):
                values = ",".join(repr(float(x)) for x in row)
                fh.write(f"{pid},{modality},{dim},{values}\n")


def read_embeddings(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    rows: dict[str, dict[str, np.ndarray]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != EMBEDDING_HEADER:
            raise DatasetFormatError(f"{path}: bad embedding header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) < 4:
                raise DatasetFormatError(f"{path} line {lineno}: too few fields")
            pid, modality, dim_s = parts[0], parts[1], parts[2]
            if modality not in ("image", "recipe"):
                raise DatasetFormatError(f"{path} line {lineno}: unknown modality {modality!r}")
            try:
                dim = int(dim_s)
                values = np.array([float(x) for x in parts[3:]], dtype=np.float64)
            except ValueError as exc:
                raise DatasetFormatError(f"{path} line {lineno}: {exc}") from exc
            if values.size != dim:
                raise DatasetFormatError(
                    f"{path} line {lineno}: declared dim {dim} but {values.size} values"
                )
            slot = rows.setdefault(pid, {})
            if modality in slot:
                raise DatasetFormatError(f"{path} line {lineno}: duplicate {modality} row for id {pid!r}")
            slot[modality] = values
            if pid not in order:
                order.append(pid)
    paired = [pid for pid in order if len(rows[pid]) == 2]
    if not paired:
        raise DatasetFormatError(f"{path}: no id has both an image and a recipe row")
    image_emb = np.stack([rows[pid]["image"] for pid in paired])
    recipe_emb = np.stack([rows[pid]["recipe"] for pid in paired])
    return paired, image_emb, recipe_emb


# --- modality probe ----------------------------------------------------------


def modality_probe_accuracy(
    params: ModelParams,
    dataset,
    split: str,
    seed: int = 0,
    iters: int = 400,
    lr: float = 0.3,
) -> float:
    """Accuracy of a freshly trained logistic-regression probe separating
    image-branch from recipe-branch penultimate features on one split
    (50/50 probe-train/probe-test)."""
    from .data import eval_pairs

    records = dataset.split_records(split)
    ids, img, rcp = eval_pairs(dataset, records, params.dtype)
    v_pen, r_pen, _, _ = embed_pairs(params, img, rcp)
    x = np.concatenate([v_pen, r_pen]).astype(np.float64)
    y = np.concatenate([np.zeros(len(v_pen)), np.ones(len(r_pen))])

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    half = len(x) // 2
    x_tr, y_tr, x_te, y_te = x[:half], y[:half], x[half:], y[half:]
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0) + 1e-8
    x_tr = (x_tr - mu) / sd
    x_te = (x_te - mu) / sd

    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(iters):
        z = x_tr @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = p - y_tr
        w -= lr * (x_tr.T @ g) / len(x_tr)
        b -= lr * float(g.mean())
    pred = (x_te @ w + b) > 0
    return float((pred == y_te).mean())
