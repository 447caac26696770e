"""Synthetic paired dataset: classes, ingredient multi-hots, several images
per recipe, and deterministic JSON-lines file I/O.

Generative process (all draws from one seeded generator, in a fixed order):
class prototypes for both feature spaces, fixed random linear maps from the
ingredient multi-hot into each feature space, a characteristic ingredient
set per class, then per recipe its class, multi-hot, recipe features, and
1..k images. Image features carry the same multi-hot signal through the
image-side map so that instance-level cross-modal matching is learnable
from held-out data, not just class-level matching.

File format: one JSON object per line, one record per recipe:
  {"recipe_id", "class_id", "ingredients": [indices], "recipe_feat": [...],
   "images": [{"image_id", "feat": [...], "grid": [...]}], "split"}
gzip is used when the path ends in ".gz". The ingredient vocabulary size is
recovered on load as max index + 1; the generator deals every slot into at
least one class's characteristic set so the recovery is exact.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DatasetFormatError

SPLIT_FRACTIONS = (0.70, 0.15)  # train, val; remainder is test
PROTO_SCALE = 1.0
INGREDIENT_MAP_SCALE = 0.65
CHAR_SLOT_PROB = 0.5
OFF_SLOT_PROB = 0.01
GRID_PATTERN_LIMIT = 0.8


@dataclass
class SyntheticSpec:
    """Knobs of the synthetic generator."""

    n_classes: int = 10
    n_ingredients: int = 40
    n_recipes: int = 500
    images_min: int = 1
    images_max: int = 3
    d_img: int = 32
    d_rcp: int = 48
    grid_g: int = 8
    noise_img: float = 0.1
    noise_rcp: float = 0.1
    seed: int = 7

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_ingredients < self.n_classes:
            raise ConfigError(
                f"n_ingredients ({self.n_ingredients}) must be >= n_classes ({self.n_classes})"
            )
        if self.noise_img < 0 or self.noise_rcp < 0:
            raise ConfigError("noise levels must be >= 0")
        if not 1 <= self.images_min <= self.images_max:
            raise ConfigError(
                f"need 1 <= images_min <= images_max, got {self.images_min}..{self.images_max}"
            )
        if min(self.n_recipes, self.d_img, self.d_rcp, self.grid_g) < 1:
            raise ConfigError("n_recipes and dimensions must be positive")


SPEC_KEYS = [f.name for f in fields(SyntheticSpec)]
_SPEC_TYPES = {f.name: f.type for f in fields(SyntheticSpec)}


def parse_spec_text(text: str, base: SyntheticSpec | None = None) -> SyntheticSpec:
    """`key = value` lines with `#` comments, keys being SyntheticSpec fields."""
    spec = SyntheticSpec(**vars(base)) if base is not None else SyntheticSpec()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"spec line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SPEC_KEYS:
            raise ConfigError(f"spec line {lineno}: unknown spec key {key!r}")
        kind = _SPEC_TYPES[key]
        try:
            setattr(spec, key, int(value) if kind == "int" else float(value))
        except ValueError as exc:
            raise ConfigError(f"spec line {lineno}: {exc}") from exc
    spec.validate()
    return spec


def format_spec(spec: SyntheticSpec) -> str:
    return "\n".join(f"{key} = {getattr(spec, key)}" for key in SPEC_KEYS) + "\n"


@dataclass
class ImageRecord:
    image_id: str
    feat: np.ndarray
    grid: np.ndarray


@dataclass
class RecipeRecord:
    recipe_id: str
    class_id: int
    ingredients: list[int]
    recipe_feat: np.ndarray
    images: list[ImageRecord]
    split: str


@dataclass
class Dataset:
    recipes: list[RecipeRecord]
    n_classes: int
    n_ingredients: int

    @property
    def d_img(self) -> int:
        return len(self.recipes[0].images[0].feat)

    @property
    def d_rcp(self) -> int:
        return len(self.recipes[0].recipe_feat)

    @property
    def grid_cells(self) -> int:
        return len(self.recipes[0].images[0].grid)

    @property
    def n_images(self) -> int:
        return sum(len(r.images) for r in self.recipes)

    def split_records(self, split: str) -> list[RecipeRecord]:
        """Records of one split; "heldout" means val + test, "all" everything."""
        if split == "all":
            return list(self.recipes)
        if split == "heldout":
            wanted = {"val", "test"}
        elif split in ("train", "val", "test"):
            wanted = {split}
        else:
            raise ConfigError(f"unknown split {split!r}")
        return [r for r in self.recipes if r.split in wanted]

    def multi_hot(self, record: RecipeRecord, dtype=np.float64) -> np.ndarray:
        mh = np.zeros(self.n_ingredients, dtype=dtype)
        mh[record.ingredients] = 1
        return mh


def _characteristic_sets(rng: np.random.Generator, n_classes: int, n_ingredients: int) -> list[np.ndarray]:
    """Per-class ingredient slots; every slot is dealt to at least one class."""
    per_class = max(1, (2 * n_ingredients) // n_classes)
    per_class = min(per_class, n_ingredients)
    dealt = rng.permutation(n_ingredients)
    sets: list[list[int]] = [[] for _ in range(n_classes)]
    for pos, slot in enumerate(dealt):
        sets[pos % n_classes].append(int(slot))
    for c in range(n_classes):
        need = per_class - len(sets[c])
        if need > 0:
            pool = np.setdiff1d(np.arange(n_ingredients), np.asarray(sets[c], dtype=int))
            extra = rng.choice(pool, size=min(need, pool.size), replace=False)
            sets[c].extend(int(s) for s in extra)
    return [np.array(sorted(s), dtype=int) for s in sets]


def generate(spec: SyntheticSpec) -> Dataset:
    """Build an in-memory dataset from the spec, deterministically."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    c, m = spec.n_classes, spec.n_ingredients

    proto_img = rng.normal(0.0, PROTO_SCALE, size=(c, spec.d_img))
    proto_rcp = rng.normal(0.0, PROTO_SCALE, size=(c, spec.d_rcp))
    map_rcp = rng.normal(0.0, INGREDIENT_MAP_SCALE, size=(m, spec.d_rcp))
    map_img = rng.normal(0.0, INGREDIENT_MAP_SCALE, size=(m, spec.d_img))
    char_sets = _characteristic_sets(rng, c, m)
    patterns = rng.uniform(-GRID_PATTERN_LIMIT, GRID_PATTERN_LIMIT, size=(c, spec.grid_g ** 2))

    # first one recipe per class so every class is populated, then uniform
    classes = np.concatenate(
        [np.arange(c), rng.integers(0, c, size=max(0, spec.n_recipes - c))]
    )[: spec.n_recipes]

    recipes: list[RecipeRecord] = []
    for idx in range(spec.n_recipes):
        cls = int(classes[idx])
        mh = np.zeros(m)
        chars = char_sets[cls]
        mh[chars] = rng.random(chars.size) < CHAR_SLOT_PROB
        others = np.setdiff1d(np.arange(m), chars)
        mh[others] = rng.random(others.size) < OFF_SLOT_PROB
        if mh.sum() == 0:
            mh[chars[rng.integers(chars.size)]] = 1
        feat_rcp = mh @ map_rcp + proto_rcp[cls] + rng.normal(0.0, spec.noise_rcp, spec.d_rcp)
        n_images = int(rng.integers(spec.images_min, spec.images_max + 1))
        rid = f"r{idx:05d}"
        images = []
        for k in range(n_images):
            feat_img = mh @ map_img + proto_img[cls] + rng.normal(0.0, spec.noise_img, spec.d_img)
            grid = patterns[cls] + rng.normal(0.0, spec.noise_img, spec.grid_g ** 2)
            grid = np.clip(grid, -0.995, 0.995)
            images.append(ImageRecord(f"{rid}_im{k}", feat_img, grid))
        recipes.append(
            RecipeRecord(rid, cls, [int(i) for i in np.flatnonzero(mh)], feat_rcp, images, "")
        )

    order = rng.permutation(spec.n_recipes)
    n_train = int(spec.n_recipes * SPLIT_FRACTIONS[0])
    n_val = int(spec.n_recipes * SPLIT_FRACTIONS[1])
    for pos, idx in enumerate(order):
        if pos < n_train:
            recipes[idx].split = "train"
        elif pos < n_train + n_val:
            recipes[idx].split = "val"
        else:
            recipes[idx].split = "test"
    return Dataset(recipes, c, m)


def _open(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save_dataset(dataset: Dataset, path) -> None:
    with _open(path, "w") as fh:
        for rec in dataset.recipes:
            obj = {
                "recipe_id": rec.recipe_id,
                "class_id": rec.class_id,
                "ingredients": rec.ingredients,
                "recipe_feat": [float(x) for x in rec.recipe_feat],
                "images": [
                    {
                        "image_id": im.image_id,
                        "feat": [float(x) for x in im.feat],
                        "grid": [float(x) for x in im.grid],
                    }
                    for im in rec.images
                ],
                "split": rec.split,
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def generate_dataset(spec: SyntheticSpec, path) -> Dataset:
    """Generate and write in one step; returns the in-memory dataset."""
    ds = generate(spec)
    save_dataset(ds, path)
    return ds


def _parse_record(obj, lineno: int, shapes: dict) -> RecipeRecord:
    def fail(msg: str):
        raise DatasetFormatError(f"line {lineno}: {msg}")

    if not isinstance(obj, dict):
        fail("record is not a JSON object")
    for key in ("recipe_id", "class_id", "ingredients", "recipe_feat", "images"):
        if key not in obj:
            fail(f"missing field {key!r}")
    if not isinstance(obj["class_id"], int) or obj["class_id"] < 0:
        fail(f"class_id must be a non-negative integer, got {obj['class_id']!r}")
    ingredients = obj["ingredients"]
    if not isinstance(ingredients, list) or any(
        not isinstance(i, int) or i < 0 for i in ingredients
    ):
        fail("ingredients must be a list of non-negative slot indices")
    feat = np.asarray(obj["recipe_feat"], dtype=np.float64)
    if feat.ndim != 1 or feat.size == 0:
        fail("recipe_feat must be a non-empty flat list of numbers")
    if shapes.setdefault("d_rcp", feat.size) != feat.size:
        fail(f"recipe_feat length {feat.size} differs from earlier records ({shapes['d_rcp']})")
    if not obj["images"]:
        fail("record has no images")
    images = []
    for im in obj["images"]:
        if not isinstance(im, dict) or "image_id" not in im or "feat" not in im or "grid" not in im:
            fail("image entry must carry image_id, feat and grid")
        ifeat = np.asarray(im["feat"], dtype=np.float64)
        grid = np.asarray(im["grid"], dtype=np.float64)
        if shapes.setdefault("d_img", ifeat.size) != ifeat.size:
            fail(f"image feat length {ifeat.size} differs from earlier records ({shapes['d_img']})")
        if shapes.setdefault("grid", grid.size) != grid.size:
            fail(f"grid length {grid.size} differs from earlier records ({shapes['grid']})")
        images.append(ImageRecord(str(im["image_id"]), ifeat, grid))
    split = obj.get("split", "")
    if split not in ("", "train", "val", "test"):
        fail(f"unknown split {split!r}")
    return RecipeRecord(
        str(obj["recipe_id"]), obj["class_id"], list(ingredients), feat, images, split
    )


def load_dataset(path) -> Dataset:
    """Parse and validate a JSON-lines dataset file.

    Schema violations raise a line-numbered error. Records without a split
    marker fall back to the positional 70/15/15 rule.
    """
    shapes: dict = {}
    recipes: list[RecipeRecord] = []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            recipes.append(_parse_record(obj, lineno, shapes))
    if not recipes:
        raise DatasetFormatError("dataset file contains no records")
    if any(not r.split for r in recipes):
        n_train = int(len(recipes) * SPLIT_FRACTIONS[0])
        n_val = int(len(recipes) * SPLIT_FRACTIONS[1])
        for pos, rec in enumerate(recipes):
            rec.split = "train" if pos < n_train else ("val" if pos < n_train + n_val else "test")
    n_classes = max(r.class_id for r in recipes) + 1
    n_ingredients = max((max(r.ingredients) + 1 for r in recipes if r.ingredients), default=1)
    return Dataset(recipes, n_classes, n_ingredients)


# --- batching ---------------------------------------------------------------


@dataclass
class PairedBatch:
    """One training minibatch of aligned (image, recipe) rows."""

    recipe_ids: np.ndarray            # integer recipe index per row
    class_ids: np.ndarray
    ingredient_multi_hot: np.ndarray  # [B, M] of 0/1
    recipe_feats: np.ndarray
    image_feats: np.ndarray
    grids: np.ndarray

    def __len__(self) -> int:
        return len(self.recipe_ids)


def _build_batch(dataset: Dataset, rows: list[tuple[int, int]], dtype) -> PairedBatch:
    recs = [dataset.recipes[ri] for ri, _ in rows]
    return PairedBatch(
        recipe_ids=np.array([ri for ri, _ in rows], dtype=np.int64),
        class_ids=np.array([r.class_id for r in recs], dtype=np.int64),
        ingredient_multi_hot=np.stack([dataset.multi_hot(r, dtype) for r in recs]),
        recipe_feats=np.stack([r.recipe_feat for r in recs]).astype(dtype),
        image_feats=np.stack([dataset.recipes[ri].images[ii].feat for ri, ii in rows]).astype(dtype),
        grids=np.stack([dataset.recipes[ri].images[ii].grid for ri, ii in rows]).astype(dtype),
    )


def make_batches(
    dataset: Dataset,
    records: list[RecipeRecord],
    batch_size: int,
    rng: np.random.Generator,
    many_to_one_mix: float = 0.25,
    dtype=np.float64,
) -> list[PairedBatch]:
    """Seeded minibatches over `records`, one image per recipe, with a
    `many_to_one_mix` fraction of batches rebuilt to contain two images of
    one recipe (exercising positive mining). The trailing partial batch is
    dropped."""
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    if batch_size > len(records):
        raise ConfigError(
            f"batch_size {batch_size} exceeds the {len(records)} available recipes"
        )
    index_of = {r.recipe_id: i for i, r in enumerate(dataset.recipes)}
    rec_indices = np.array([index_of[r.recipe_id] for r in records], dtype=np.int64)
    order = rng.permutation(len(rec_indices))
    n_batches = len(rec_indices) // batch_size
    n_dup = int(round(many_to_one_mix * n_batches))
    dup_flags = np.zeros(n_batches, dtype=bool)
    if n_dup:
        dup_flags[rng.permutation(n_batches)[:n_dup]] = True

    multi = [ri for ri in rec_indices if len(dataset.recipes[ri].images) >= 2]
    batches = []
    for b in range(n_batches):
        chunk = [int(rec_indices[i]) for i in order[b * batch_size : (b + 1) * batch_size]]
        rows = []
        for ri in chunk:
            n_img = len(dataset.recipes[ri].images)
            rows.append((ri, int(rng.integers(n_img))))
        if dup_flags[b]:
            eligible = [i for i, (ri, _) in enumerate(rows) if len(dataset.recipes[ri].images) >= 2]
            if not eligible and multi:
                # swap in a recipe that has a second image
                outside = [ri for ri in multi if ri not in chunk]
                if outside:
                    rows[-1] = (int(outside[int(rng.integers(len(outside)))]), 0)
                    eligible = [len(rows) - 1]
            if eligible:
                pos = eligible[0]
                ri, ii = rows[pos]
                n_img = len(dataset.recipes[ri].images)
                other = (ii + 1 + int(rng.integers(n_img - 1))) % n_img
                rows[-1 if pos != len(rows) - 1 else 0] = (ri, other)
        batches.append(_build_batch(dataset, rows, dtype))
    return batches


def eval_pairs(dataset: Dataset, records: list[RecipeRecord], dtype=np.float64):
    """One (image, recipe) feature pair per recipe for evaluation; the
    designated image is the first by image id."""
    ids = [r.recipe_id for r in records]
    img = np.stack([min(r.images, key=lambda im: im.image_id).feat for r in records]).astype(dtype)
    rcp = np.stack([r.recipe_feat for r in records]).astype(dtype)
    return ids, img, rcp
