import math
from types import SimpleNamespace

import numpy as np
import pytest

from xmem.config import HyperParams
from xmem.errors import DegenerateBatchError, DimensionError, NonFiniteError
from xmem.losses import (
    LossBreakdown,
    gradient_penalty,
    i2r_losses,
    joint_objective,
    modality_alignment_losses,
    r2i_losses,
    total_loss,
    triplet_loss_all,
    triplet_loss_hard,
)
from xmem.model import EmbeddingBatch, ModelConfig, ModelParams, ParamGroup, Stack
from xmem.trainer import AblationConfig

CFG = ModelConfig(d_img=9, d_rcp=11, d=7, grid_g=4, n_classes=4, n_ingredients=13)


def make_params(seed=0, cfg=CFG):
    return ModelParams.initialize(cfg, np.random.default_rng(seed), "f64")


def emb_from(v, r):
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return EmbeddingBatch(v, r, v, r)


from oracles import oracle_triplet_all, oracle_triplet_hard, random_triplet_batch as random_batch


class TestTripletHard:
    def test_worked_example(self):
        # pairs (V1=0.0, R1=0.2), (V2=0.5, R2=0.7), alpha=0.5:
        # hinges V1:0, V2:0.4, R1:0.4, R2:0 -> mean 0.2
        emb = emb_from([[0.0], [0.5]], [[0.2], [0.7]])
        res = triplet_loss_hard(emb, [0, 1], 0.5)
        assert res.value == pytest.approx(0.2, abs=1e-12)
        assert res.n_contributing == 4
        hinges = {(s.direction, s.anchor): s.hinge for s in res.selections}
        assert hinges[("image", 0)] == pytest.approx(0.0)
        assert hinges[("image", 1)] == pytest.approx(0.4, abs=1e-12)
        assert hinges[("recipe", 0)] == pytest.approx(0.4, abs=1e-12)
        assert hinges[("recipe", 1)] == pytest.approx(0.0)

    def test_single_row_batch_degenerate(self):
        emb = emb_from([[0.0]], [[1.0]])
        with pytest.raises(DegenerateBatchError):
            triplet_loss_hard(emb, [0], 0.3)

    def test_single_recipe_batch_degenerate(self):
        emb = emb_from([[0.0], [1.0]], [[0.5], [0.5]])
        with pytest.raises(DegenerateBatchError):
            triplet_loss_hard(emb, [4, 4], 0.3)

    def test_satisfied_margin_gives_zero(self):
        emb = emb_from([[0.0], [10.0]], [[0.1], [10.1]])
        res = triplet_loss_hard(emb, [0, 1], 0.5)
        assert res.value == 0.0

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(120):
            v, r, ids = random_batch(rng, with_duplicates=trial % 2 == 0)
            emb = emb_from(v, r)
            res = triplet_loss_hard(emb, ids, 0.3)
            expected = oracle_triplet_hard(v, r, ids, 0.3)
            assert abs(res.value - expected) < 1e-12

    def test_selection_respects_recipe_ids(self):
        rng = np.random.default_rng(7)
        v, r, ids = random_batch(rng, with_duplicates=True)
        res = triplet_loss_hard(emb_from(v, r), ids, 0.3)
        for sel in res.selections:
            assert ids[sel.positive] == ids[sel.anchor]
            assert ids[sel.negative] != ids[sel.anchor]
            assert sel.hinge >= 0.0

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        v, r, ids = rng.normal(size=(6, 5)), rng.normal(size=(6, 5)), np.arange(6)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        base = triplet_loss_hard(emb_from(v, r), ids, 0.3).value
        rotated = triplet_loss_hard(emb_from(v @ q, r @ q), ids, 0.3).value
        assert rotated == pytest.approx(base, abs=1e-9)

    def test_positive_mining_binds_with_duplicates(self):
        # recipe 0 appears twice with different images; the recipe anchor
        # must pick the farther image as its positive
        v = np.array([[0.0], [3.0], [10.0]])
        r = np.array([[1.0], [1.0], [11.0]])
        ids = np.array([0, 0, 1])
        res = triplet_loss_hard(emb_from(v, r), ids, 0.1)
        rec_sels = [s for s in res.selections if s.direction == "recipe" and s.anchor == 0]
        assert rec_sels[0].positive == 1  # distance 2 > distance 1


class TestTripletAll:
    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(77)
        for trial in range(60):
            v, r, ids = random_batch(rng, with_duplicates=trial % 2 == 0)
            res = triplet_loss_all(emb_from(v, r), ids, 0.3)
            expected = oracle_triplet_all(v, r, ids, 0.3)
            assert abs(res.value - expected) < 1e-12

    def test_equals_hard_when_one_candidate_each(self):
        # with B=2 and distinct ids there is exactly one positive and one
        # negative per anchor, so mining changes nothing
        emb = emb_from([[0.0], [0.5]], [[0.2], [0.7]])
        assert triplet_loss_all(emb, [0, 1], 0.5).value == pytest.approx(
            triplet_loss_hard(emb, [0, 1], 0.5).value, abs=1e-12
        )


class TestModalityAlignment:
    def test_constant_zero_critic_gives_exactly_lambda_gp(self):
        params = make_params()
        for g in params.stacks["critic"].groups:
            g.weights[...] = 0.0
            g.bias[...] = 0.0
        rng = np.random.default_rng(0)
        emb = EmbeddingBatch(
            rng.normal(size=(6, CFG.d)), rng.normal(size=(6, CFG.d)), None, None
        )
        eps = rng.uniform(size=(6, 1))
        res = modality_alignment_losses(emb, params, "wgan_gp", 10.0, eps)
        assert res.critic_loss == 10.0  # 0 - 0 + lambda_gp * (0 - 1)^2
        assert res.encoder_loss == 0.0

    def test_unit_norm_linear_critic_zero_penalty_exact(self):
        params = make_params()
        w = np.zeros((CFG.d, 1))
        w[2, 0] = 1.0  # axis-aligned unit vector: norm exactly 1.0
        params.stacks["critic"] = Stack("critic", [ParamGroup("critic.0", w, np.zeros(1))], [None])
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, CFG.d))
        value, grads, gx = gradient_penalty(params.stacks["critic"], x)
        assert value == 0.0
        assert all(np.array_equal(gw, 0 * gw) and np.array_equal(gb, 0 * gb) for gw, gb in grads.values())
        assert np.array_equal(gx, np.zeros_like(gx))

    def test_random_unit_norm_linear_critic_penalty_tiny(self):
        params = make_params()
        rng = np.random.default_rng(2)
        w = rng.normal(size=(CFG.d, 1))
        w /= np.linalg.norm(w)
        params.stacks["critic"] = Stack("critic", [ParamGroup("critic.0", w, np.zeros(1))], [None])
        value, _, _ = gradient_penalty(params.stacks["critic"], rng.normal(size=(4, CFG.d)))
        assert value < 1e-12

    def test_identical_batches_zero_wasserstein(self):
        params = make_params(seed=5)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, CFG.d))
        emb = EmbeddingBatch(x, x.copy(), None, None)
        eps = rng.uniform(size=(6, 1))
        res = modality_alignment_losses(emb, params, "wgan_gp", 10.0, eps)
        assert res.wasserstein_est == 0.0
        gp = gradient_penalty(params.stacks["critic"], x)[0]
        assert res.critic_loss == pytest.approx(10.0 * gp, abs=1e-12)

    def test_encoder_loss_is_negated_wasserstein_term(self):
        params = make_params(seed=6)
        rng = np.random.default_rng(4)
        emb = EmbeddingBatch(rng.normal(size=(5, CFG.d)), rng.normal(size=(5, CFG.d)), None, None)
        eps = rng.uniform(size=(5, 1))
        res = modality_alignment_losses(emb, params, "wgan_gp", 10.0, eps)
        from xmem.model import critic_score

        gap = critic_score(params, emb.v_pen).mean() - critic_score(params, emb.r_pen).mean()
        assert res.encoder_loss == pytest.approx(gap, abs=1e-12)
        x_hat = eps * emb.v_pen + (1.0 - eps) * emb.r_pen
        gp = gradient_penalty(params.stacks["critic"], x_hat)[0]
        assert res.critic_loss == pytest.approx(-gap + 10.0 * gp, abs=1e-12)

    def test_logistic_mode_zero_critic(self):
        params = make_params()
        for g in params.stacks["critic"].groups:
            g.weights[...] = 0.0
            g.bias[...] = 0.0
        rng = np.random.default_rng(5)
        emb = EmbeddingBatch(rng.normal(size=(4, CFG.d)), rng.normal(size=(4, CFG.d)), None, None)
        res = modality_alignment_losses(emb, params, "logistic", 10.0)
        assert res.critic_loss == pytest.approx(2 * math.log(2), abs=1e-12)
        assert res.encoder_loss == pytest.approx(-res.critic_loss, abs=1e-15)

    def test_negative_lambda_gp_rejected(self):
        params = make_params()
        emb = EmbeddingBatch(np.zeros((2, CFG.d)), np.zeros((2, CFG.d)), None, None)
        with pytest.raises(ValueError):
            modality_alignment_losses(emb, params, "wgan_gp", -1.0, np.full((2, 1), 0.5))

    def test_unknown_mode_rejected(self):
        params = make_params()
        emb = EmbeddingBatch(np.zeros((2, CFG.d)), np.zeros((2, CFG.d)), None, None)
        with pytest.raises(ValueError):
            modality_alignment_losses(emb, params, "hinge", 1.0)


def make_translation_batch(rng, n=6, cfg=CFG):
    return SimpleNamespace(
        recipe_ids=np.arange(n),
        class_ids=rng.integers(0, cfg.n_classes, size=n),
        ingredient_multi_hot=(rng.random((n, cfg.n_ingredients)) < 0.4).astype(np.float64),
        recipe_feats=rng.normal(size=(n, cfg.d_rcp)),
        image_feats=rng.normal(size=(n, cfg.d_img)),
        grids=rng.uniform(-0.9, 0.9, size=(n, cfg.grid_g ** 2)),
    )


def full_emb(params, batch):
    from xmem.model import embed_batch

    return embed_batch(params, batch)[0]


class TestR2I:
    def test_zero_logit_discriminator_gives_ln2(self):
        params = make_params(seed=1)
        for g in params.stacks["disc_r2i"].groups:
            g.weights[...] = 0.0
            g.bias[...] = 0.0
        rng = np.random.default_rng(0)
        batch = make_translation_batch(rng)
        res = r2i_losses(batch, full_emb(params, batch), params)
        assert res.disc_loss == pytest.approx(math.log(2), abs=1e-12)
        assert res.gen_loss == pytest.approx(math.log(2), abs=1e-12)

    def test_uniform_classifier_gives_ln_c(self):
        params = make_params(seed=2)
        for g in params.stacks["cls_r2i"].groups:
            g.weights[...] = 0.0
            g.bias[...] = 0.0
        rng = np.random.default_rng(1)
        batch = make_translation_batch(rng)
        res = r2i_losses(batch, full_emb(params, batch), params)
        assert res.cls_loss == pytest.approx(math.log(CFG.n_classes), abs=1e-12)

    def test_matches_scalar_oracle(self):
        params = make_params(seed=3)
        rng = np.random.default_rng(2)
        batch = make_translation_batch(rng, n=4)
        emb = full_emb(params, batch)
        res = r2i_losses(batch, emb, params)

        def sigmoid(z):
            return 1.0 / (1.0 + math.exp(-z))

        fake = params.stacks["gen_r2i"].forward(emb.r_final)[0]
        s_real = params.stacks["disc_r2i"].forward(batch.grids)[0][:, 0]
        s_fake = params.stacks["disc_r2i"].forward(fake)[0][:, 0]
        n = len(s_real)
        disc = 0.5 * (
            sum(-math.log(sigmoid(s)) for s in s_real) / n
            + sum(-math.log(1.0 - sigmoid(s)) for s in s_fake) / n
        )
        gen = sum(-math.log(sigmoid(s)) for s in s_fake) / n
        z_real = params.stacks["cls_r2i"].forward(batch.grids)[0]
        z_fake = params.stacks["cls_r2i"].forward(fake)[0]

        def ce(z, y):
            return sum(
                math.log(sum(math.exp(zi) for zi in row)) - row[y[i]]
                for i, row in enumerate(z)
            ) / len(y)

        cls = 0.5 * (ce(z_real.tolist(), batch.class_ids) + ce(z_fake.tolist(), batch.class_ids))
        assert res.disc_loss == pytest.approx(disc, abs=1e-10)
        assert res.gen_loss == pytest.approx(gen, abs=1e-10)
        assert res.cls_loss == pytest.approx(cls, abs=1e-10)

    def test_missing_grids_rejected(self):
        params = make_params()
        rng = np.random.default_rng(3)
        batch = make_translation_batch(rng)
        batch.grids = None
        with pytest.raises(ValueError, match="grids"):
            r2i_losses(batch, full_emb(params, batch), params)

    def test_noise_variant_embedding_grad_width(self):
        cfg = ModelConfig(**{**vars(CFG), "gen_noise_dim": 3})
        params = ModelParams.initialize(cfg, np.random.default_rng(4), "f64")
        rng = np.random.default_rng(5)
        batch = make_translation_batch(rng, n=4)
        emb = full_emb(params, batch)
        noise = rng.normal(size=(4, 3))
        res = r2i_losses(batch, emb, params, gen_noise=noise)
        assert res.gen.d_embedding.shape == emb.r_final.shape
        assert res.cls.d_embedding.shape == emb.r_final.shape


class TestI2R:
    def test_zero_logits_give_ln2(self):
        params = make_params(seed=4)
        for g in params.stacks["ing_i2r"].groups:
            g.weights[...] = 0.0
            g.bias[...] = 0.0
        rng = np.random.default_rng(4)
        batch = make_translation_batch(rng)
        res = i2r_losses(batch, full_emb(params, batch), params)
        assert res.ingredient_loss == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated_logits_vanish(self):
        cfg = ModelConfig(d_img=3, d_rcp=3, d=2, grid_g=2, n_classes=2, n_ingredients=3)
        params = make_params(cfg=cfg)
        # bias drives logits to +-40 exactly matching the targets
        params.stacks["ing_i2r"] = Stack(
            "ing_i2r",
            [ParamGroup("ing_i2r.0", np.zeros((2, 3)), np.array([40.0, -40.0, 40.0]))],
            [None],
        )
        batch = SimpleNamespace(
            class_ids=np.array([0]),
            ingredient_multi_hot=np.array([[1.0, 0.0, 1.0]]),
        )
        emb = EmbeddingBatch(None, None, np.zeros((1, 2)), None)
        res = i2r_losses(batch, emb, params)
        assert res.ingredient_loss < 1e-15

    def test_hand_computed_three_slot_case(self):
        cfg = ModelConfig(d_img=3, d_rcp=3, d=2, grid_g=2, n_classes=2, n_ingredients=3)
        params = make_params(cfg=cfg)
        params.stacks["ing_i2r"] = Stack(
            "ing_i2r",
            [ParamGroup("ing_i2r.0", np.zeros((2, 3)), np.array([1.0, -1.0, 0.0]))],
            [None],
        )
        batch = SimpleNamespace(
            class_ids=np.array([0]),
            ingredient_multi_hot=np.array([[1.0, 0.0, 1.0]]),
        )
        emb = EmbeddingBatch(None, None, np.zeros((1, 2)), None)
        res = i2r_losses(batch, emb, params)
        # scalar oracle: BCE(1,1) + BCE(-1,0) + BCE(0,1), averaged
        expected = (
            math.log(1 + math.exp(-1)) + math.log(1 + math.exp(-1)) + math.log(2)
        ) / 3
        assert res.ingredient_loss == pytest.approx(expected, abs=1e-12)

    def test_multi_hot_width_mismatch(self):
        params = make_params()
        rng = np.random.default_rng(6)
        batch = make_translation_batch(rng)
        batch.ingredient_multi_hot = batch.ingredient_multi_hot[:, :-1]
        with pytest.raises(DimensionError):
            i2r_losses(batch, full_emb(params, batch), params)


class TestTotalLoss:
    def test_reference_tradeoff_weights(self):
        parts = LossBreakdown(l_ret=1.0, l_ma=2.0, l_g_r2i=1.5, l_c_r2i=0.5, l_g_i2r=0.6, l_c_i2r=0.4)
        hp = HyperParams(lambda1=0.005, lambda2=0.002)
        # 1.0 + 0.005 * 2.0 + 0.002 * (2.0 + 1.0) = 1.016
        assert total_loss(parts, hp) == pytest.approx(1.016, abs=1e-15)

    def test_zero_weights_reduce_to_retrieval(self):
        parts = LossBreakdown(l_ret=0.42, l_ma=9.0, l_g_r2i=5.0, l_c_r2i=1.0, l_g_i2r=2.0, l_c_i2r=3.0)
        assert total_loss(parts, HyperParams(lambda1=0.0, lambda2=0.0)) == 0.42

    def test_nan_component_rejected(self):
        parts = LossBreakdown(l_ret=float("nan"))
        with pytest.raises(NonFiniteError):
            total_loss(parts, HyperParams())

    def test_linear_in_tradeoff_weights(self):
        parts = LossBreakdown(l_ret=1.0, l_ma=3.0, l_g_r2i=0.5, l_c_r2i=0.25, l_g_i2r=0.5, l_c_i2r=0.75)
        base = total_loss(parts, HyperParams(lambda1=0.0, lambda2=0.0))
        for lam1, lam2 in ((0.1, 0.0), (0.0, 0.2), (0.3, 0.4)):
            value = total_loss(parts, HyperParams(lambda1=lam1, lambda2=lam2))
            assert value == pytest.approx(base + lam1 * 3.0 + lam2 * 2.0, abs=1e-12)


class TestJointObjective:
    def test_disabled_arms_contribute_zero(self):
        params = make_params(seed=8)
        rng = np.random.default_rng(9)
        batch = make_translation_batch(rng)
        hp = HyperParams(lambda1=0.5, lambda2=0.5)
        res = joint_objective(params, batch, hp, AblationConfig(True, False, False, False))
        assert res.breakdown.l_ma == 0.0
        assert res.breakdown.l_r2i == 0.0
        assert res.breakdown.l_i2r == 0.0
        assert res.breakdown.total == res.breakdown.l_ret
        touched = set(res.grads)
        assert all(
            name.startswith(("enc_image", "enc_recipe", "shared_fc")) for name in touched
        )

    def test_total_composes_breakdown(self):
        params = make_params(seed=9)
        rng = np.random.default_rng(10)
        batch = make_translation_batch(rng)
        hp = HyperParams(lambda1=0.31, lambda2=0.47)
        res = joint_objective(params, batch, hp, AblationConfig(), rng.uniform(size=(len(batch.recipe_ids), 1)))
        bd = res.breakdown
        assert bd.total == pytest.approx(
            bd.l_ret + 0.31 * bd.l_ma + 0.47 * (bd.l_r2i + bd.l_i2r), abs=1e-12
        )
