"""Network topology: two modality encoders, a weight-shared projection,
a modality critic, and four translation heads, all built from affine +
activation stacks with explicit backward passes.

Parameter groups are stored once; the shared projection appears in the
parameter store a single time and its gradient accumulates from both the
image and the recipe branch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import CheckpointFormatError, DimensionError
from .tensor import (
    activation_backward,
    activation_forward,
    affine_backward,
    affine_forward,
    check_finite,
    dtype_for,
)

CHECKPOINT_MAGIC = b"XMEM1"

STACK_NAMES = (
    "enc_image",
    "enc_recipe",
    "shared_fc",
    "critic",
    "gen_r2i",
    "disc_r2i",
    "cls_r2i",
    "ing_i2r",
    "cls_i2r",
)


@dataclass
class ParamGroup:
    """One affine layer's parameters: weights [n_in, n_out] and bias [n_out]."""

    name: str
    weights: np.ndarray
    bias: np.ndarray

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def size(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class StackCache:
    """Per-layer inputs and pre-activations recorded during a forward pass."""

    inputs: list
    preacts: list
    output: np.ndarray


class Stack:
    """A sequence of affine layers, each optionally followed by an
    elementwise activation (None = linear)."""

    def __init__(self, name: str, groups: list[ParamGroup], activations: list[str | None]):
        if len(groups) != len(activations):
            raise DimensionError(f"stack '{name}': {len(groups)} layers, {len(activations)} activations")
        self.name = name
        self.groups = groups
        self.activations = activations

    @property
    def n_in(self) -> int:
        return self.groups[0].n_in

    @property
    def n_out(self) -> int:
        return self.groups[-1].n_out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, StackCache]:
        inputs, preacts = [], []
        h = x
        for group, act in zip(self.groups, self.activations):
            inputs.append(h)
            a = affine_forward(h, group)
            preacts.append(a)
            h = activation_forward(a, act) if act is not None else a
        check_finite(f"stack '{self.name}' output", h)
        return h, StackCache(inputs, preacts, h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: StackCache, grad_out: np.ndarray):
        """Returns (grad_input, {group_name: (grad_w, grad_b)})."""
        grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        g = grad_out
        for group, act, x, a in zip(
            reversed(self.groups), reversed(self.activations),
            reversed(cache.inputs), reversed(cache.preacts),
        ):
            if act is not None:
                g = activation_backward(a, act, g)
            g, gw, gb = affine_backward(x, group, g)
            grads[group.name] = (gw, gb)
        return g, grads


def glorot_uniform(n_in: int, n_out: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)


def build_stack(
    name: str,
    dims: list[int],
    rng: np.random.Generator,
    dtype,
    hidden_activation: str = "leaky_relu",
    output_activation: str | None = None,
) -> Stack:
    """Affine stack over `dims`; hidden layers use `hidden_activation`,
    the last layer uses `output_activation`."""
    groups, acts = [], []
    for i in range(len(dims) - 1):
        w = glorot_uniform(dims[i], dims[i + 1], rng, dtype)
        b = np.zeros(dims[i + 1], dtype=dtype)
        groups.append(ParamGroup(f"{name}.{i}", w, b))
        acts.append(hidden_activation if i < len(dims) - 2 else output_activation)
    return Stack(name, groups, acts)


@dataclass
class ModelConfig:
    """Shape-level description of the network."""

    d_img: int = 32
    d_rcp: int = 48
    d: int = 16
    grid_g: int = 8
    n_classes: int = 10
    n_ingredients: int = 40
    normalize_embeddings: bool = True
    hidden_activation: str = "leaky_relu"
    # width of the optional noise block concatenated to the generator input;
    # 0 keeps the generator deterministic
    gen_noise_dim: int = 0

    @property
    def grid_cells(self) -> int:
        return self.grid_g * self.grid_g


@dataclass
class EmbeddingBatch:
    """Penultimate features and final embeddings for one batch."""

    v_pen: np.ndarray
    r_pen: np.ndarray
    v_final: np.ndarray
    r_final: np.ndarray


@dataclass
class EmbedCache:
    enc_image: StackCache
    enc_recipe: StackCache
    fc_image: StackCache
    fc_recipe: StackCache
    v_prenorm: np.ndarray
    r_prenorm: np.ndarray
    v_norms: np.ndarray | None
    r_norms: np.ndarray | None


class ModelParams:
    """All trainable weight groups, keyed by stack name."""

    def __init__(self, config: ModelConfig, stacks: dict[str, Stack], precision: str):
        self.config = config
        self.stacks = stacks
        self.precision = precision

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator, precision: str = "f64") -> "ModelParams":
        dtype = dtype_for(precision)
        c = config
        h = c.hidden_activation
        gg = c.grid_cells
        stacks = {
            "enc_image": build_stack("enc_image", [c.d_img, c.d, c.d], rng, dtype, h, h),
            "enc_recipe": build_stack("enc_recipe", [c.d_rcp, c.d, c.d], rng, dtype, h, h),
            "shared_fc": build_stack("shared_fc", [c.d, c.d], rng, dtype, h, None),
            "critic": build_stack("critic", [c.d, c.d, 1], rng, dtype, h, None),
            "gen_r2i": build_stack("gen_r2i", [c.d + c.gen_noise_dim, c.d, gg], rng, dtype, h, "tanh"),
            "disc_r2i": build_stack("disc_r2i", [gg, c.d, 1], rng, dtype, h, None),
            "cls_r2i": build_stack("cls_r2i", [gg, c.d, c.n_classes], rng, dtype, h, None),
            "ing_i2r": build_stack("ing_i2r", [c.d, c.d, c.n_ingredients], rng, dtype, h, None),
            "cls_i2r": build_stack("cls_i2r", [c.d, c.d, c.n_classes], rng, dtype, h, None),
        }
        return cls(config, stacks, precision)

    @property
    def dtype(self):
        return dtype_for(self.precision)

    def groups(self) -> Iterable[ParamGroup]:
        for stack in self.stacks.values():
            yield from stack.groups

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat view of every parameter array, keyed '<group>.W' / '<group>.b'."""
        out: dict[str, np.ndarray] = {}
        for g in self.groups():
            out[f"{g.name}.W"] = g.weights
            out[f"{g.name}.b"] = g.bias
        return out

    def stack_array_names(self, stack_name: str) -> list[str]:
        return [f"{g.name}.{s}" for g in self.stacks[stack_name].groups for s in ("W", "b")]

    def n_parameters(self) -> int:
        return sum(g.size() for g in self.groups())

    def clone(self) -> "ModelParams":
        stacks = {
            name: Stack(
                name,
                [ParamGroup(g.name, g.weights.copy(), g.bias.copy()) for g in st.groups],
                list(st.activations),
            )
            for name, st in self.stacks.items()
        }
        return ModelParams(replace(self.config), stacks, self.precision)


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, np.finfo(x.dtype).tiny)
    return x / safe, safe


def _normalize_rows_backward(y: np.ndarray, norms: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # y = x / ||x||:  dx = (g - (g . y) y) / ||x||
    inner = (grad * y).sum(axis=1, keepdims=True)
    return (grad - inner * y) / norms


def embed_batch(params: ModelParams, batch) -> tuple[EmbeddingBatch, EmbedCache]:
    """Run both encoder branches and the shared projection.

    `batch` only needs `.image_feats` [B, d_img] and `.recipe_feats`
    [B, d_rcp]. Final embeddings are row-L2-normalized when the model
    config enables it.
    """
    v_pen, cache_v = params.stacks["enc_image"].forward(np.asarray(batch.image_feats))
    r_pen, cache_r = params.stacks["enc_recipe"].forward(np.asarray(batch.recipe_feats))
    fc = params.stacks["shared_fc"]
    v_fc, cache_fv = fc.forward(v_pen)
    r_fc, cache_fr = fc.forward(r_pen)
    if params.config.normalize_embeddings:
        v_final, v_norms = _normalize_rows(v_fc)
        r_final, r_norms = _normalize_rows(r_fc)
    else:
        v_final, r_final = v_fc, r_fc
        v_norms = r_norms = None
    emb = EmbeddingBatch(v_pen, r_pen, v_final, r_final)
    cache = EmbedCache(cache_v, cache_r, cache_fv, cache_fr, v_fc, r_fc, v_norms, r_norms)
    return emb, cache


def embed_backward(
    params: ModelParams,
    emb: EmbeddingBatch,
    cache: EmbedCache,
    d_v_final: np.ndarray | None = None,
    d_r_final: np.ndarray | None = None,
    d_v_pen: np.ndarray | None = None,
    d_r_pen: np.ndarray | None = None,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Propagate embedding-level gradients into encoder and shared-FC
    parameter gradients. Shared-FC gradients accumulate from both branches."""
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    fc = params.stacks["shared_fc"]

    def accumulate(new: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
        for name, (gw, gb) in new.items():
            if name in grads:
                ow, ob = grads[name]
                grads[name] = (ow + gw, ob + gb)
            else:
                grads[name] = (gw, gb)

    def branch(d_final, d_pen, fc_cache, enc_name, enc_cache, final, norms):
        g_pen_total = None
        if d_final is not None:
            g = d_final
            if params.config.normalize_embeddings:
                g = _normalize_rows_backward(final, norms, g)
            g_pen, fc_grads = fc.backward(fc_cache, g)
            accumulate(fc_grads)
            g_pen_total = g_pen
        if d_pen is not None:
            g_pen_total = d_pen if g_pen_total is None else g_pen_total + d_pen
        if g_pen_total is not None:
            _, enc_grads = params.stacks[enc_name].backward(enc_cache, g_pen_total)
            accumulate(enc_grads)

    branch(d_v_final, d_v_pen, cache.fc_image, "enc_image", cache.enc_image, emb.v_final, cache.v_norms)
    branch(d_r_final, d_r_pen, cache.fc_recipe, "enc_recipe", cache.enc_recipe, emb.r_final, cache.r_norms)
    return grads


def critic_score(params: ModelParams, feats: np.ndarray) -> np.ndarray:
    """One real score per row; unbounded in wgan_gp mode, a raw logit in
    logistic mode (the loss applies the sigmoid)."""
    feats = np.asarray(feats)
    out, _ = params.stacks["critic"].forward(feats)
    return out[:, 0]


def generator_input(params: ModelParams, r_final: np.ndarray, noise: np.ndarray | None) -> np.ndarray:
    """Recipe conditioning for the generator; appends the noise block when
    the model was built with one."""
    r_final = np.asarray(r_final)
    nz = params.config.gen_noise_dim
    if nz == 0:
        if noise is not None:
            raise DimensionError("this model's generator takes no noise input")
        return r_final
    if noise is None:
        raise DimensionError(f"generator expects a noise block of width {nz}")
    noise = np.asarray(noise)
    if noise.shape != (r_final.shape[0], nz):
        raise DimensionError(
            f"noise shape {noise.shape} does not match (batch, {nz})"
        )
    return np.concatenate([r_final, noise], axis=1)


def generate_image(params: ModelParams, r_final: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
    """Synthetic g*g grid conditioned on the final recipe embedding; the
    tanh output keeps values in (-1, 1). Deterministic given parameters
    unless the model was configured with a concatenated noise block."""
    out, _ = params.stacks["gen_r2i"].forward(generator_input(params, r_final, noise))
    return out


def predict_ingredients(params: ModelParams, v_final: np.ndarray) -> np.ndarray:
    """Raw multi-label logits, one per ingredient slot."""
    out, _ = params.stacks["ing_i2r"].forward(np.asarray(v_final))
    return out


# --- checkpoint I/O -------------------------------------------------------
#
# Flat binary container:
#   magic "XMEM1" | precision tag (3 ascii bytes) | u32 group count |
#   manifest: per group u16 name-length, name, u32 n_in, u32 n_out, u32 bias-len |
#   data: per group weights row-major then bias, little-endian floats.


def save_checkpoint(params: ModelParams, path) -> None:
    wire = "<f4" if params.precision == "f32" else "<f8"
    groups = list(params.groups())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(params.precision.encode("ascii"))
        fh.write(struct.pack("<I", len(groups)))
        for g in groups:
            name = g.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<III", g.n_in, g.n_out, g.bias.size))
        for g in groups:
            fh.write(np.ascontiguousarray(g.weights, dtype=wire).tobytes())
            fh.write(np.ascontiguousarray(g.bias, dtype=wire).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path, config: ModelConfig | None = None) -> ModelParams:
    """Load a checkpoint. With `config`, shapes are validated against it;
    without, the topology is reconstructed from the manifest and default
    activation kinds are assumed."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}; not a model checkpoint")
        precision = _read_exact(fh, 3, "precision tag").decode("ascii")
        if precision not in ("f32", "f64"):
            raise CheckpointFormatError(f"unknown precision tag {precision!r}")
        wire = "<f4" if precision == "f32" else "<f8"
        itemsize = 4 if precision == "f32" else 8
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "group count"))
        manifest = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "group name").decode("utf-8")
            n_in, n_out, blen = struct.unpack("<III", _read_exact(fh, 12, "group shape"))
            manifest.append((name, n_in, n_out, blen))
        loaded: dict[str, ParamGroup] = {}
        for name, n_in, n_out, blen in manifest:
            wraw = _read_exact(fh, n_in * n_out * itemsize, f"weights of {name}")
            braw = _read_exact(fh, blen * itemsize, f"bias of {name}")
            w = np.frombuffer(wraw, dtype=wire).astype(dtype_for(precision)).reshape(n_in, n_out)
            b = np.frombuffer(braw, dtype=wire).astype(dtype_for(precision))
            loaded[name] = ParamGroup(name, w, b)
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes after parameter data")

    if config is not None:
        rng = np.random.default_rng(0)
        params = ModelParams.initialize(config, rng, precision)
        expected = {g.name: g for g in params.groups()}
        if set(expected) != set(loaded):
            raise CheckpointFormatError(
                f"checkpoint groups {sorted(loaded)} do not match model groups {sorted(expected)}"
            )
        for name, g in expected.items():
            lw = loaded[name]
            if lw.weights.shape != g.weights.shape or lw.bias.shape != g.bias.shape:
                raise CheckpointFormatError(
                    f"group '{name}': checkpoint shape {lw.weights.shape}/{lw.bias.shape} "
                    f"does not match model {g.weights.shape}/{g.bias.shape}"
                )
            g.weights[...] = lw.weights
            g.bias[...] = lw.bias
        return params

    return _reconstruct(loaded, precision)


def _reconstruct(loaded: dict[str, ParamGroup], precision: str) -> ModelParams:
    by_stack: dict[str, list[ParamGroup]] = {}
    for name, group in loaded.items():
        stack_name, _, idx = name.rpartition(".")
        if not stack_name or not idx.isdigit():
            raise CheckpointFormatError(f"cannot parse group name {name!r}")
        by_stack.setdefault(stack_name, []).append(group)
    missing = [s for s in STACK_NAMES if s not in by_stack]
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing stacks: {missing}")

    cfg = ModelConfig()
    stacks: dict[str, Stack] = {}
    for stack_name, groups in by_stack.items():
        groups.sort(key=lambda g: int(g.name.rpartition(".")[2]))
        for prev, nxt in zip(groups, groups[1:]):
            if prev.n_out != nxt.n_in:
                raise CheckpointFormatError(f"stack '{stack_name}' layer shapes do not chain")
        acts: list[str | None] = [cfg.hidden_activation] * (len(groups) - 1) + [None]
        if stack_name in ("enc_image", "enc_recipe"):
            acts[-1] = cfg.hidden_activation
        elif stack_name == "gen_r2i":
            acts[-1] = "tanh"
        stacks[stack_name] = Stack(stack_name, groups, acts)

    d = stacks["shared_fc"].n_in
    gg = stacks["gen_r2i"].n_out
    grid_g = int(round(np.sqrt(gg)))
    if grid_g * grid_g != gg:
        raise CheckpointFormatError(f"generator output size {gg} is not a square grid")
    gen_noise_dim = stacks["gen_r2i"].n_in - d
    if gen_noise_dim < 0:
        raise CheckpointFormatError(
            f"generator input {stacks['gen_r2i'].n_in} narrower than embedding dim {d}"
        )
    cfg = ModelConfig(
        d_img=stacks["enc_image"].n_in,
        d_rcp=stacks["enc_recipe"].n_in,
        d=d,
        grid_g=grid_g,
        n_classes=stacks["cls_i2r"].n_out,
        n_ingredients=stacks["ing_i2r"].n_out,
        gen_noise_dim=gen_noise_dim,
    )
    return ModelParams(cfg, stacks, precision)
