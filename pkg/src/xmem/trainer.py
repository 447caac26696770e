"""Training loop: alternating critic / discriminator / joint updates per
batch with Adam, ablation arms, checkpointing and a per-epoch CSV log.

Update order per batch follows the usual critic-first alternation: several
modality-critic steps, one grid-discriminator step, then one joint step on
the weighted encoder objective. Each player's Adam state only ever touches
that player's parameter groups.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .data import Dataset, make_batches
from .errors import ConfigError
from .losses import joint_objective, modality_alignment_losses, r2i_losses
from .model import ModelConfig, ModelParams, embed_batch, load_checkpoint, save_checkpoint
from .optim import AdamConfig, AdamState, adam_step

ADVERSARIAL_BETA1 = 0.5
MANY_TO_ONE_MIX = 0.25

JOINT_STACKS_ALWAYS = ("enc_image", "enc_recipe", "shared_fc")


@dataclass
class AblationConfig:
    """Which components participate; everything off is the plain-triplet arm."""

    use_hard_mining: bool = True
    use_ma: bool = True
    use_r2i: bool = True
    use_i2r: bool = True

    @classmethod
    def from_hyper(cls, hp) -> "AblationConfig":
        return cls(hp.use_hard_mining, hp.use_ma, hp.use_r2i, hp.use_i2r)


@dataclass
class EpochRecord:
    epoch: int
    l_ret: float
    l_ma: float
    l_r2i: float
    l_i2r: float
    total: float
    wasserstein_est: float
    mean_hinge: float
    seconds: float


TRAIN_LOG_COLUMNS = [f.name for f in fields(EpochRecord)]


@dataclass
class OptimizerBank:
    joint: AdamState = field(default_factory=AdamState)
    critic: AdamState = field(default_factory=AdamState)
    disc: AdamState = field(default_factory=AdamState)


def _flat_grads(grads: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, (gw, gb) in grads.items():
        out[f"{name}.W"] = gw
        out[f"{name}.b"] = gb
    return out


def _select(grads: dict[str, np.ndarray], allowed: set[str]) -> dict[str, np.ndarray]:
    return {k: v for k, v in grads.items() if k in allowed}


def joint_array_names(params: ModelParams, ablation: AblationConfig) -> set[str]:
    stacks = list(JOINT_STACKS_ALWAYS)
    if ablation.use_r2i:
        stacks += ["gen_r2i", "cls_r2i"]
    if ablation.use_i2r:
        stacks += ["ing_i2r", "cls_i2r"]
    names: set[str] = set()
    for s in stacks:
        names.update(params.stack_array_names(s))
    return names


def _critic_phase(params: ModelParams, emb, hp, opt: AdamState, rng) -> None:
    arrays = params.arrays()
    allowed = set(params.stack_array_names("critic"))
    cfg = AdamConfig(hp.lr, ADVERSARIAL_BETA1, hp.beta2, hp.eps)
    for _ in range(hp.critic_steps):
        eps = rng.uniform(size=(len(emb.v_pen), 1)) if hp.alignment_mode == "wgan_gp" else None
        ma = modality_alignment_losses(emb, params, hp.alignment_mode, hp.lambda_gp, eps)
        adam_step(arrays, _select(_flat_grads(ma.critic_grads), allowed), opt, cfg)


def _disc_phase(params: ModelParams, batch, emb, hp, opt: AdamState) -> None:
    arrays = params.arrays()
    allowed = set(params.stack_array_names("disc_r2i"))
    cfg = AdamConfig(hp.lr, ADVERSARIAL_BETA1, hp.beta2, hp.eps)
    r2 = r2i_losses(batch, emb, params)
    adam_step(arrays, _select(_flat_grads(r2.disc.param_grads), allowed), opt, cfg)


def _joint_phase(params: ModelParams, batch, hp, ablation, opt: AdamState, rng):
    arrays = params.arrays()
    eps = None
    if ablation.use_ma and hp.alignment_mode == "wgan_gp":
        eps = rng.uniform(size=(len(batch), 1))
    result = joint_objective(params, batch, hp, ablation, eps)
    allowed = joint_array_names(params, ablation)
    cfg = AdamConfig(hp.lr, hp.beta1, hp.beta2, hp.eps)
    adam_step(arrays, _select(_flat_grads(result.grads), allowed), opt, cfg)
    return result


def train_epoch(
    params: ModelParams,
    dataset: Dataset,
    hp,
    ablation: AblationConfig,
    rng_seed,
    optimizers: OptimizerBank,
    records=None,
) -> EpochRecord:
    """One pass over the training split. `rng_seed` fixes batch order and
    every stochastic draw inside the epoch; re-running with identical state
    reproduces the parameters bit for bit."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(rng_seed)
    if records is None:
        records = dataset.split_records("train")
    if not records:
        raise ConfigError("training split is empty")
    batches = make_batches(
        dataset, records, hp.batch_size, rng, MANY_TO_ONE_MIX, params.dtype
    )
    if not batches:
        raise ConfigError(
            f"batch_size {hp.batch_size} leaves no full batch from {len(records)} recipes"
        )

    sums = {"l_ret": 0.0, "l_ma": 0.0, "l_r2i": 0.0, "l_i2r": 0.0, "total": 0.0}
    w_sum = 0.0
    hinge_sum = 0.0
    for batch in batches:
        emb, _ = embed_batch(params, batch)
        if ablation.use_ma:
            _critic_phase(params, emb, hp, optimizers.critic, rng)
        if ablation.use_r2i:
            _disc_phase(params, batch, emb, hp, optimizers.disc)
        result = _joint_phase(params, batch, hp, ablation, optimizers.joint, rng)
        bd = result.breakdown
        sums["l_ret"] += bd.l_ret
        sums["l_ma"] += bd.l_ma
        sums["l_r2i"] += bd.l_r2i
        sums["l_i2r"] += bd.l_i2r
        sums["total"] += bd.total
        w_sum += abs(result.wasserstein_est)
        hinge_sum += result.triplet.mean_active_hinge

    n = len(batches)
    return EpochRecord(
        epoch=-1,
        l_ret=sums["l_ret"] / n,
        l_ma=sums["l_ma"] / n,
        l_r2i=sums["l_r2i"] / n,
        l_i2r=sums["l_i2r"] / n,
        total=sums["total"] / n,
        wasserstein_est=w_sum / n,
        mean_hinge=hinge_sum / n,
        seconds=time.perf_counter() - t0,
    )


def train(
    dataset: Dataset,
    hp,
    *,
    ablation: AblationConfig | None = None,
    resume_from=None,
    out_dir=None,
    checkpoint_every: int = 0,
    progress=None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Full training run on the dataset's train split.

    Initialization is seeded from the config; `resume_from` loads a
    checkpoint instead. With `out_dir`, a checkpoint is written at the end
    (and every `checkpoint_every` epochs when that is > 0).
    """
    if ablation is None:
        ablation = AblationConfig.from_hyper(hp)
    model_cfg = ModelConfig(
        d_img=dataset.d_img,
        d_rcp=dataset.d_rcp,
        d=hp.d,
        grid_g=hp.grid_g,
        n_classes=dataset.n_classes,
        n_ingredients=dataset.n_ingredients,
        normalize_embeddings=hp.normalize_embeddings,
    )
    if model_cfg.grid_cells != dataset.grid_cells:
        raise ConfigError(
            f"config grid_g={hp.grid_g} ({model_cfg.grid_cells} cells) does not match "
            f"dataset grids of {dataset.grid_cells} cells"
        )
    if resume_from is not None:
        params = load_checkpoint(resume_from, model_cfg)
        if params.precision != hp.precision:
            raise ConfigError(
                f"checkpoint precision {params.precision} differs from config {hp.precision}"
            )
    else:
        params = ModelParams.initialize(model_cfg, np.random.default_rng([hp.seed, 0]), hp.precision)

    optimizers = OptimizerBank()
    records: list[EpochRecord] = []
    train_records = dataset.split_records("train")
    for epoch in range(hp.epochs):
        rec = train_epoch(
            params, dataset, hp, ablation, [hp.seed, 1 + epoch], optimizers, train_records
        )
        rec.epoch = epoch
        records.append(rec)
        if progress is not None:
            progress(rec)
        if out_dir is not None and checkpoint_every > 0 and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(params, _checkpoint_path(out_dir, epoch + 1))
    if out_dir is not None:
        save_checkpoint(params, final_checkpoint_path(out_dir))
    return params, records


def final_checkpoint_path(out_dir):
    import os

    return os.path.join(str(out_dir), "checkpoint.xmem")


def _checkpoint_path(out_dir, epoch: int):
    import os

    return os.path.join(str(out_dir), f"checkpoint_epoch{epoch:04d}.xmem")


def write_train_log(records: list[EpochRecord], path, config_lines: list[str] | None = None) -> None:
    """CSV log, one row per epoch, preceded by '#'-commented effective-config
    lines so a run is reproducible from its log alone."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in config_lines or []:
            fh.write(f"# {line}\n")
        fh.write(",".join(TRAIN_LOG_COLUMNS) + "\n")
        for rec in records:
            fh.write(
                ",".join(
                    repr(getattr(rec, col)) if col != "epoch" else str(rec.epoch)
                    for col in TRAIN_LOG_COLUMNS
                )
                + "\n"
            )


def read_train_log(path) -> tuple[list[EpochRecord], list[str]]:
    config_lines: list[str] = []
    records: list[EpochRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("# "):
            config_lines.append(ln[2:])
        elif ln.strip():
            body.append(ln)
    if not body or body[0] != ",".join(TRAIN_LOG_COLUMNS):
        raise ConfigError(f"{path}: not a training log")
    for ln in body[1:]:
        parts = ln.split(",")
        records.append(
            EpochRecord(
                epoch=int(parts[0]),
                **{col: float(v) for col, v in zip(TRAIN_LOG_COLUMNS[1:], parts[1:])},
            )
        )
    return records, config_lines
