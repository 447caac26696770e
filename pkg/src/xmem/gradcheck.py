"""End-to-end gradient verification: every loss, checked against central
finite differences through the full model.

The harness builds a small random instance with tanh activations (smooth,
so central differences are trustworthy) and resamples until the instance
is safe for differencing: no hinge near zero, no near-tie in the mining
selection, no near-zero norm under the gradient penalty or the embedding
normalization. The piecewise-linear activations have their own pointwise
unit tests; the backward code paths checked here are shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .config import HyperParams
from .losses import (
    i2r_losses,
    joint_objective,
    merge_grads,
    modality_alignment_losses,
    r2i_losses,
    triplet_loss_all,
    triplet_loss_hard,
)
from .model import ModelConfig, ModelParams, embed_backward, embed_batch
from .tensor import CheckReport, finite_diff_check
from .trainer import AblationConfig

SAFETY_MARGIN = 2e-3


@dataclass
class HarnessInstance:
    params: ModelParams
    batch: SimpleNamespace
    hp: HyperParams
    eps: np.ndarray


def _make_batch(rng: np.random.Generator, cfg: ModelConfig):
    # six rows, two many-to-one recipes to exercise positive mining
    recipe_ids = np.array([0, 0, 1, 1, 2, 3])
    n = len(recipe_ids)
    n_recipes = recipe_ids.max() + 1
    rcp_feats = rng.normal(size=(n_recipes, cfg.d_rcp))
    multi_hots = (rng.random((n_recipes, cfg.n_ingredients)) < 0.4).astype(np.float64)
    multi_hots[multi_hots.sum(axis=1) == 0, 0] = 1.0
    classes = rng.integers(0, cfg.n_classes, size=n_recipes)
    return SimpleNamespace(
        recipe_ids=recipe_ids,
        class_ids=classes[recipe_ids],
        ingredient_multi_hot=multi_hots[recipe_ids],
        recipe_feats=rcp_feats[recipe_ids],
        image_feats=rng.normal(size=(n, cfg.d_img)),
        grids=rng.uniform(-0.9, 0.9, size=(n, cfg.grid_g ** 2)),
    )


def _selection_gaps_ok(emb, recipe_ids, alpha: float) -> bool:
    """True when every hinge and every mining decision sits clear of the
    finite-difference step."""
    from .losses import _pair_distances  # shared distance helper

    ids = np.asarray(recipe_ids)
    same = ids[:, None] == ids[None, :]
    dist = _pair_distances(emb.v_final, emb.r_final)
    for dmat in (dist, dist.T):
        for i in range(len(ids)):
            neg = dmat[i][~same[i]]
            pos = dmat[i][same[i]]
            # hard-mining margins: unique extreme values (exact ties between
            # bitwise-identical duplicate rows stay tied under perturbation)
            pos_sorted = np.sort(np.unique(pos))[::-1]
            if len(pos_sorted) > 1 and pos_sorted[0] - pos_sorted[1] < SAFETY_MARGIN:
                return False
            neg_sorted = np.sort(np.unique(neg))
            if len(neg_sorted) > 1 and neg_sorted[1] - neg_sorted[0] < SAFETY_MARGIN:
                return False
            # every possible hinge (covers both the mined and plain variants)
            for dp in pos:
                for dn in neg:
                    if abs(dp - dn + alpha) < SAFETY_MARGIN:
                        return False
    return True


def build_harness(seed: int, alignment_mode: str = "wgan_gp") -> HarnessInstance:
    hp = HyperParams(
        d=7, d_img=9, d_rcp=11, grid_g=4, alpha=0.3,
        lambda1=0.31, lambda2=0.47, lambda_gp=10.0,
        alignment_mode=alignment_mode, precision="f64",
    )
    cfg = ModelConfig(
        d_img=hp.d_img, d_rcp=hp.d_rcp, d=hp.d, grid_g=hp.grid_g,
        n_classes=4, n_ingredients=13,
        normalize_embeddings=True, hidden_activation="tanh",
    )
    for attempt in range(64):
        rng = np.random.default_rng([seed, attempt])
        params = ModelParams.initialize(cfg, rng, "f64")
        batch = _make_batch(rng, cfg)
        eps = rng.uniform(0.1, 0.9, size=(len(batch.recipe_ids), 1))
        emb, cache = embed_batch(params, batch)
        if cache.v_norms.min() < 1e-2 or cache.r_norms.min() < 1e-2:
            continue
        if not _selection_gaps_ok(emb, batch.recipe_ids, hp.alpha):
            continue
        from .losses import _stack_input_gradients

        x_hat = eps * emb.v_pen + (1.0 - eps) * emb.r_pen
        _, gp_cache = params.stacks["critic"].forward(x_hat)
        g, _ = _stack_input_gradients(params.stacks["critic"], gp_cache)
        if np.sqrt((g * g).sum(axis=1)).min() < 5e-3:
            continue
        return HarnessInstance(params, batch, hp, eps)
    raise RuntimeError(f"could not build a difference-safe instance from seed {seed}")


def _flat(grads) -> dict[str, np.ndarray]:
    return {f"{n}.{p}": a for n, (gw, gb) in grads.items() for p, a in (("W", gw), ("b", gb))}


def _loss_cases(inst: HarnessInstance):
    """(name, value_and_grads, value_only) triples over the full parameter set."""
    params, batch, hp = inst.params, inst.batch, inst.hp

    def embed_grads(d_v_final=None, d_r_final=None, d_v_pen=None, d_r_pen=None):
        emb, cache = embed_batch(params, batch)
        return embed_backward(params, emb, cache, d_v_final, d_r_final, d_v_pen, d_r_pen)

    def ret_case(fn):
        def value():
            emb, _ = embed_batch(params, batch)
            return fn(emb, batch.recipe_ids, hp.alpha).value

        def value_and_grads():
            emb, cache = embed_batch(params, batch)
            res = fn(emb, batch.recipe_ids, hp.alpha)
            grads = embed_backward(params, emb, cache, res.d_v_final, res.d_r_final)
            return res.value, _flat(grads)

        return value_and_grads, value

    def ma_case(side: str, mode: str):
        def compute():
            emb, cache = embed_batch(params, batch)
            ma = modality_alignment_losses(emb, params, mode, hp.lambda_gp, inst.eps)
            if side == "critic":
                value, head, dv, dr = ma.critic_loss, ma.critic_grads, ma.critic_d_v_pen, ma.critic_d_r_pen
            else:
                value, head, dv, dr = ma.encoder_loss, ma.encoder_grads, ma.encoder_d_v_pen, ma.encoder_d_r_pen
            grads = dict(head)
            merge_grads(grads, embed_backward(params, emb, cache, d_v_pen=dv, d_r_pen=dr))
            return value, grads

        def value_and_grads():
            value, grads = compute()
            return value, _flat(grads)

        return value_and_grads, (lambda: compute()[0])

    def r2i_case(which: str):
        def compute():
            emb, cache = embed_batch(params, batch)
            res = r2i_losses(batch, emb, params)
            bundle = getattr(res, which)
            value = {"gen": res.gen_loss, "disc": res.disc_loss, "cls": res.cls_loss}[which]
            grads = dict(bundle.param_grads)
            merge_grads(grads, embed_backward(params, emb, cache, d_r_final=bundle.d_embedding))
            return value, grads

        def value_and_grads():
            value, grads = compute()
            return value, _flat(grads)

        return value_and_grads, (lambda: compute()[0])

    def i2r_case(which: str):
        def compute():
            emb, cache = embed_batch(params, batch)
            res = i2r_losses(batch, emb, params)
            bundle = res.ingredient if which == "ingredient" else res.cls
            value = res.ingredient_loss if which == "ingredient" else res.cls_loss
            grads = dict(bundle.param_grads)
            merge_grads(grads, embed_backward(params, emb, cache, d_v_final=bundle.d_embedding))
            return value, grads

        def value_and_grads():
            value, grads = compute()
            return value, _flat(grads)

        return value_and_grads, (lambda: compute()[0])

    def total_case():
        ablation = AblationConfig()

        def value_and_grads():
            res = joint_objective(params, batch, hp, ablation, inst.eps)
            return res.breakdown.total, _flat(res.grads)

        return value_and_grads, (lambda: joint_objective(params, batch, hp, ablation, inst.eps).breakdown.total)

    cases = [
        ("retrieval hard-mined", *ret_case(triplet_loss_hard)),
        ("retrieval plain", *ret_case(triplet_loss_all)),
        ("alignment critic (wgan_gp)", *ma_case("critic", "wgan_gp")),
        ("alignment encoder (wgan_gp)", *ma_case("encoder", "wgan_gp")),
        ("alignment critic (logistic)", *ma_case("critic", "logistic")),
        ("alignment encoder (logistic)", *ma_case("encoder", "logistic")),
        ("r2i generator", *r2i_case("gen")),
        ("r2i discriminator", *r2i_case("disc")),
        ("r2i classifier", *r2i_case("cls")),
        ("i2r ingredients", *i2r_case("ingredient")),
        ("i2r classifier", *i2r_case("cls")),
        ("total objective", *total_case()),
    ]
    return cases


def run_gradcheck(
    seed: int,
    coords_per_array: int = 4,
    step: float = 1e-5,
    tol: float = 1e-6,
) -> list[tuple[str, CheckReport]]:
    """Finite-difference every loss at one seed. Returns (name, report)
    pairs; a report passes when its max relative error is below `tol`."""
    inst = build_harness(seed)
    arrays = inst.params.arrays()
    results = []
    for name, value_and_grads, value_only in _loss_cases(inst):
        report = finite_diff_check(
            value_and_grads,
            arrays,
            step=step,
            tol=tol,
            coords_per_array=coords_per_array,
            seed=seed,
            loss_only=value_only,
        )
        results.append((name, report))
    return results
