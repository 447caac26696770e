"""All training losses with explicit gradients.

Four families:
  * bidirectional triplet retrieval loss, in a hard-mined and a plain
    (all-triplets) variant;
  * adversarial modality alignment on the penultimate features, either as
    a Wasserstein critic with gradient penalty or as a logistic
    discriminator;
  * recipe-to-image translation (generator / discriminator / class
    consistency on synthetic grids);
  * image-to-recipe translation (multi-label ingredient recovery + class
    consistency);
plus the weighted composition of the encoder-side terms into the total
objective.

Gradient bundles are keyed by parameter-group name; every loss also reports
its gradient with respect to the embeddings it consumes so callers can chain
through the encoders. Discriminator-side and generator-side losses are
returned separately: each adversarial player optimizes only its own piece.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatchError, DimensionError, NonFiniteError
from .model import EmbeddingBatch, ModelParams, Stack, StackCache, embed_backward, embed_batch
from .tensor import activation_curvature, activation_deriv

GradDict = dict[str, tuple[np.ndarray, np.ndarray]]


def merge_grads(dst: GradDict, src: GradDict, scale: float = 1.0) -> None:
    """Accumulate `scale * src` into `dst` in place."""
    for name, (gw, gb) in src.items():
        if name in dst:
            ow, ob = dst[name]
            dst[name] = (ow + scale * gw, ob + scale * gb)
        else:
            dst[name] = (scale * gw, scale * gb)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), stable for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


# --- retrieval loss -------------------------------------------------------


@dataclass
class TripletSelection:
    """Mined triplet for one anchor."""

    direction: str  # "image" or "recipe" anchor
    anchor: int
    positive: int
    negative: int
    hinge: float


@dataclass
class TripletResult:
    value: float
    selections: list[TripletSelection]
    d_v_final: np.ndarray
    d_r_final: np.ndarray
    n_contributing: int
    mean_active_hinge: float


def _pair_distances(v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """dist[i, j] = euclidean distance between v[i] and r[j]."""
    diff = v[:, None, :] - r[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _check_triplet_batch(v: np.ndarray, recipe_ids: np.ndarray) -> None:
    if v.shape[0] < 2:
        raise DegenerateBatchError(f"triplet loss needs a batch of >= 2, got {v.shape[0]}")
    if np.all(recipe_ids == recipe_ids[0]):
        raise DegenerateBatchError("triplet loss: batch has a single recipe id, no negative exists")


def _add_distance_grad(grad_a, grad_b, a, b, i, j, dist, coeff) -> None:
    # d = ||a_i - b_j||: gradient coeff * (a_i - b_j) / d on a_i, negated on b_j.
    if dist <= 0.0:
        return
    u = (a[i] - b[j]) * (coeff / dist)
    grad_a[i] += u
    grad_b[j] -= u


def triplet_loss_hard(emb: EmbeddingBatch, recipe_ids, alpha: float) -> TripletResult:
    """Bidirectional triplet loss with in-batch hard mining.

    Per anchor the positive is the same-recipe candidate at maximum
    distance and the negative the different-recipe candidate at minimum
    distance (ties broken by lowest index). Anchors without an in-batch
    negative are skipped; the loss is the mean hinge over contributing
    anchors of both directions.
    """
    v, r = emb.v_final, emb.r_final
    ids = np.asarray(recipe_ids)
    _check_triplet_batch(v, ids)
    same = ids[:, None] == ids[None, :]
    dist = _pair_distances(v, r)

    grad_v = np.zeros_like(v)
    grad_r = np.zeros_like(r)
    selections: list[TripletSelection] = []
    total = 0.0
    active_hinges = []
    n_contributing = 0

    for direction, dmat, anchors, cands in (
        ("image", dist, v, r),
        ("recipe", dist.T, r, v),
    ):
        for i in range(len(ids)):
            neg_mask = ~same[i]
            if not neg_mask.any():
                continue
            n_contributing += 1
            row = dmat[i]
            pos_row = np.where(same[i], row, -np.inf)
            p = int(np.argmax(pos_row))
            neg_row = np.where(neg_mask, row, np.inf)
            n = int(np.argmin(neg_row))
            hinge = row[p] - row[n] + alpha
            hinge = float(hinge) if hinge > 0.0 else 0.0
            selections.append(TripletSelection(direction, i, p, n, hinge))
            if hinge > 0.0:
                total += hinge
                active_hinges.append(hinge)
                if direction == "image":
                    _add_distance_grad(grad_v, grad_r, v, r, i, p, row[p], 1.0)
                    _add_distance_grad(grad_v, grad_r, v, r, i, n, row[n], -1.0)
                else:
                    _add_distance_grad(grad_r, grad_v, r, v, i, p, row[p], 1.0)
                    _add_distance_grad(grad_r, grad_v, r, v, i, n, row[n], -1.0)

    if n_contributing == 0:
        raise DegenerateBatchError("triplet loss: no anchor has a valid negative in this batch")
    grad_v /= n_contributing
    grad_r /= n_contributing
    value = total / n_contributing
    mean_active = float(np.mean(active_hinges)) if active_hinges else 0.0
    return TripletResult(value, selections, grad_v, grad_r, n_contributing, mean_active)


def triplet_loss_all(emb: EmbeddingBatch, recipe_ids, alpha: float) -> TripletResult:
    """Plain triplet loss: mean hinge over every valid (anchor, positive,
    negative) combination in both directions, no mining."""
    v, r = emb.v_final, emb.r_final
    ids = np.asarray(recipe_ids)
    _check_triplet_batch(v, ids)
    same = ids[:, None] == ids[None, :]
    diff_mask = ~same
    dist = _pair_distances(v, r)

    grad_v = np.zeros_like(v)
    grad_r = np.zeros_like(r)
    total = 0.0
    count = 0
    active = []

    def one_direction(dmat, grad_anchor, grad_cand, anchors, cands):
        nonlocal total, count
        # hinge[a, p, n] over positives p (same id) and negatives n (different id)
        h = dmat[:, :, None] - dmat[:, None, :] + alpha
        valid = same[:, :, None] & diff_mask[:, None, :]
        count_here = int(valid.sum())
        count += count_here
        act = valid & (h > 0.0)
        total_here = float(h[act].sum()) if act.any() else 0.0
        total += total_here
        if act.any():
            active.extend(h[act].tolist())
        # net coefficient on each pair distance d(a, j):
        #   + (number of active triplets where j is the positive)
        #   - (number of active triplets where j is the negative)
        coef = act.sum(axis=2).astype(dmat.dtype) - act.sum(axis=1).astype(dmat.dtype)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(dmat > 0.0, coef / dmat, 0.0)
        grad_anchor += u.sum(axis=1)[:, None] * anchors - u @ cands
        grad_cand += (u.sum(axis=0)[:, None] * cands - u.T @ anchors)

    one_direction(dist, grad_v, grad_r, v, r)
    one_direction(dist.T, grad_r, grad_v, r, v)

    if count == 0:
        raise DegenerateBatchError("triplet loss: no valid triplet in this batch")
    grad_v /= count
    grad_r /= count
    mean_active = float(np.mean(active)) if active else 0.0
    return TripletResult(total / count, [], grad_v, grad_r, count, mean_active)


# --- modality alignment ---------------------------------------------------


@dataclass
class AlignmentResult:
    critic_loss: float
    encoder_loss: float
    # gradients of critic_loss
    critic_grads: GradDict
    critic_d_v_pen: np.ndarray
    critic_d_r_pen: np.ndarray
    # gradients of encoder_loss
    encoder_grads: GradDict
    encoder_d_v_pen: np.ndarray
    encoder_d_r_pen: np.ndarray
    wasserstein_est: float


def _stack_input_gradients(stack: Stack, cache: StackCache):
    """Per-row gradient of the scalar stack output w.r.t. the stack input.

    Only valid for stacks with a single output unit. Returns the gradient
    [B, n_in] plus the intermediate chain values needed for the
    second-order pass of the gradient penalty.
    """
    n_layers = len(stack.groups)
    batch = cache.inputs[0].shape[0]
    derivs = [
        np.ones_like(cache.preacts[l]) if stack.activations[l] is None
        else activation_deriv(cache.preacts[l], stack.activations[l])
        for l in range(n_layers)
    ]
    g_hidden = [None] * (n_layers + 1)  # g_hidden[l] = d out / d h_{l-1}
    g_pre = [None] * n_layers
    g_hidden[n_layers] = np.ones((batch, stack.n_out), dtype=cache.output.dtype)
    for l in range(n_layers - 1, -1, -1):
        g_pre[l] = g_hidden[l + 1] * derivs[l]
        g_hidden[l] = g_pre[l] @ stack.groups[l].weights.T
    return g_hidden[0], (derivs, g_pre, g_hidden)


def gradient_penalty(stack: Stack, x: np.ndarray):
    """mean over rows of (||grad_x D(x)|| - 1)^2 for a scalar-output stack,
    with its gradient w.r.t. the stack parameters and w.r.t. x.

    The parameter gradient needs one differentiation through the
    input-gradient computation itself (a second-order pass); activation
    curvature enters through the chain's derivative terms.
    """
    out, cache = stack.forward(x)
    if out.shape[1] != 1:
        raise DimensionError(f"gradient penalty needs a scalar critic, got output width {out.shape[1]}")
    g, (derivs, g_pre, g_hidden) = _stack_input_gradients(stack, cache)
    batch = x.shape[0]
    norms = np.sqrt((g * g).sum(axis=1, keepdims=True))
    value = float(((norms - 1.0) ** 2).mean())

    # adjoint of g under S = mean (||g|| - 1)^2; rows with zero norm use the
    # zero subgradient (they contribute the constant 1 to the value).
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(norms > 0.0, 2.0 * (norms - 1.0) / (batch * norms), 0.0)
    b_g = coef * g

    n_layers = len(stack.groups)
    grad_w = [np.zeros_like(gr.weights) for gr in stack.groups]
    grad_b = [np.zeros_like(gr.bias) for gr in stack.groups]
    b_pre_fwd = [np.zeros_like(p) for p in cache.preacts]

    # pass 1: reverse the input-gradient chain (which ran top-down), picking
    # up the explicit weight appearances and the curvature terms.
    b_g_hidden = b_g
    for l in range(n_layers):
        b_g_pre = b_g_hidden @ stack.groups[l].weights
        grad_w[l] += b_g_hidden.T @ g_pre[l]
        act = stack.activations[l]
        if act is not None:
            curv = activation_curvature(cache.preacts[l], act)
            b_pre_fwd[l] += b_g_pre * g_hidden[l + 1] * curv
        b_g_hidden = b_g_pre * derivs[l]
    # b_g_hidden now corresponds to the constant top seed; it has no parents.

    # pass 2: reverse the forward activations that the chain read through
    # the derivative terms.
    b_hidden = np.zeros((batch, stack.n_out), dtype=x.dtype)
    for l in range(n_layers - 1, -1, -1):
        b_pre = b_pre_fwd[l] + b_hidden * derivs[l]
        grad_w[l] += cache.inputs[l].T @ b_pre
        grad_b[l] += b_pre.sum(axis=0)
        b_hidden = b_pre @ stack.groups[l].weights.T
    grad_x = b_hidden

    grads: GradDict = {
        gr.name: (gw, gb) for gr, gw, gb in zip(stack.groups, grad_w, grad_b)
    }
    return value, grads, grad_x


def modality_alignment_losses(
    emb: EmbeddingBatch,
    params: ModelParams,
    mode: str = "wgan_gp",
    lambda_gp: float = 10.0,
    eps: np.ndarray | None = None,
) -> AlignmentResult:
    """Critic-side and encoder-side alignment losses on V_m / R_m.

    In `wgan_gp` mode the critic minimizes
        mean D(R_m) - mean D(V_m) + lambda_gp * GP(interpolates)
    and the encoders minimize the negated Wasserstein term
        mean D(V_m) - mean D(R_m),
    which pulls the two feature distributions together. `eps` holds the
    per-row interpolation coefficients in [0, 1], shape [B, 1].

    In `logistic` mode the critic output is a logit, the critic minimizes
    the label-1-for-images cross entropy, and the encoders minimize its
    negation (the saturating min-max form).
    """
    if lambda_gp < 0:
        raise ValueError(f"lambda_gp must be >= 0, got {lambda_gp}")
    v, r = emb.v_pen, emb.r_pen
    if v.shape != r.shape:
        raise DimensionError(f"penultimate feature shapes differ: {v.shape} vs {r.shape}")
    critic = params.stacks["critic"]
    batch = v.shape[0]
    sv, cache_v = critic.forward(v)
    sr, cache_r = critic.forward(r)
    w_gap = float(sv.mean() - sr.mean())  # estimate of E D(V) - E D(R)

    ones = np.ones_like(sv)
    if mode == "wgan_gp":
        if eps is None:
            raise ValueError("wgan_gp mode needs per-row interpolation coefficients `eps`")
        eps = np.asarray(eps, dtype=v.dtype).reshape(batch, 1)
        x_hat = eps * v + (1.0 - eps) * r

        critic_grads: GradDict = {}
        d_v_c, gv = critic.backward(cache_v, -ones / batch)
        merge_grads(critic_grads, gv)
        d_r_c, gr = critic.backward(cache_r, ones / batch)
        merge_grads(critic_grads, gr)
        gp_value, gp_grads, gp_dx = gradient_penalty(critic, x_hat)
        merge_grads(critic_grads, gp_grads, lambda_gp)
        critic_loss = -w_gap + lambda_gp * gp_value
        critic_d_v = d_v_c + lambda_gp * gp_dx * eps
        critic_d_r = d_r_c + lambda_gp * gp_dx * (1.0 - eps)

        encoder_loss = w_gap
        encoder_grads: GradDict = {}
        d_v_e, gv = critic.backward(cache_v, ones / batch)
        merge_grads(encoder_grads, gv)
        d_r_e, gr = critic.backward(cache_r, -ones / batch)
        merge_grads(encoder_grads, gr)
        return AlignmentResult(
            critic_loss, encoder_loss,
            critic_grads, critic_d_v, critic_d_r,
            encoder_grads, d_v_e, d_r_e,
            w_gap,
        )

    if mode == "logistic":
        # critic: cross entropy with labels image=1, recipe=0 on the logits
        critic_loss = float(_softplus(-sv).mean() + _softplus(sr).mean())
        up_v = -_sigmoid(-sv) / batch
        up_r = _sigmoid(sr) / batch
        critic_grads = {}
        d_v_c, gv = critic.backward(cache_v, up_v)
        merge_grads(critic_grads, gv)
        d_r_c, gr = critic.backward(cache_r, up_r)
        merge_grads(critic_grads, gr)
        encoder_loss = -critic_loss
        encoder_grads = {name: (-gw, -gb) for name, (gw, gb) in critic_grads.items()}
        return AlignmentResult(
            critic_loss, encoder_loss,
            critic_grads, d_v_c, d_r_c,
            encoder_grads, -d_v_c, -d_r_c,
            w_gap,
        )

    raise ValueError(f"unknown alignment mode {mode!r}")


# --- translation consistency ----------------------------------------------


@dataclass
class HeadLossGrads:
    """Gradient bundle of one scalar loss: parameter grads plus the grad
    w.r.t. the embedding the head consumed."""

    param_grads: GradDict
    d_embedding: np.ndarray


@dataclass
class R2IResult:
    gen_loss: float
    disc_loss: float
    cls_loss: float
    gen: HeadLossGrads   # d gen_loss (non-saturating) w.r.t. params / r_final
    disc: HeadLossGrads  # d disc_loss w.r.t. params / r_final
    cls: HeadLossGrads   # d cls_loss w.r.t. params / r_final


@dataclass
class I2RResult:
    ingredient_loss: float
    cls_loss: float
    ingredient: HeadLossGrads
    cls: HeadLossGrads


def _softmax_ce(logits: np.ndarray, labels: np.ndarray, weight: float):
    """Mean cross entropy (scaled by `weight`) and its logit gradient."""
    batch = logits.shape[0]
    logp = _log_softmax(logits)
    value = -float(logp[np.arange(batch), labels].mean()) * weight
    grad = np.exp(logp)
    grad[np.arange(batch), labels] -= 1.0
    grad *= weight / batch
    return value, grad


def r2i_losses(batch, emb: EmbeddingBatch, params: ModelParams, gen_noise=None) -> R2IResult:
    """Recipe-to-image consistency: discriminator loss on real vs generated
    grids, non-saturating generator loss, and class loss averaged over real
    and generated grids. The generator-side gradients flow back into the
    recipe embedding. `gen_noise` feeds models built with a concatenated
    noise block; the default generator is deterministic."""
    from .model import generator_input

    real = getattr(batch, "grids", None)
    if real is None:
        raise ValueError("r2i losses need real image grids in the batch")
    real = np.asarray(real)
    labels = np.asarray(batch.class_ids)
    gen = params.stacks["gen_r2i"]
    disc = params.stacks["disc_r2i"]
    cls = params.stacks["cls_r2i"]
    if real.shape[1] != disc.n_in:
        raise DimensionError(f"grid width {real.shape[1]} does not match discriminator input {disc.n_in}")
    batch_n = real.shape[0]
    d_emb = emb.r_final.shape[1]

    fake, cache_gen = gen.forward(generator_input(params, emb.r_final, gen_noise))
    s_real, cache_dr = disc.forward(real)
    s_fake, cache_df = disc.forward(fake)

    # discriminator: average of the real (label 1) and fake (label 0) terms
    disc_loss = 0.5 * float(_softplus(-s_real).mean() + _softplus(s_fake).mean())
    disc_grads: GradDict = {}
    _, g = disc.backward(cache_dr, -0.5 * _sigmoid(-s_real) / batch_n)
    merge_grads(disc_grads, g)
    d_fake, g = disc.backward(cache_df, 0.5 * _sigmoid(s_fake) / batch_n)
    merge_grads(disc_grads, g)
    d_r_disc, g = gen.backward(cache_gen, d_fake)
    merge_grads(disc_grads, g)

    # generator: non-saturating -log sigmoid(D(fake))
    gen_loss = float(_softplus(-s_fake).mean())
    gen_grads: GradDict = {}
    d_fake, g = disc.backward(cache_df, -_sigmoid(-s_fake) / batch_n)
    merge_grads(gen_grads, g)
    d_r_gen, g = gen.backward(cache_gen, d_fake)
    merge_grads(gen_grads, g)
    d_r_disc = d_r_disc[:, :d_emb]
    d_r_gen = d_r_gen[:, :d_emb]

    # class consistency on both real and generated grids
    z_real, cache_cr = cls.forward(real)
    z_fake, cache_cf = cls.forward(fake)
    loss_real, dz_real = _softmax_ce(z_real, labels, 0.5)
    loss_fake, dz_fake = _softmax_ce(z_fake, labels, 0.5)
    cls_loss = loss_real + loss_fake
    cls_grads: GradDict = {}
    _, g = cls.backward(cache_cr, dz_real)
    merge_grads(cls_grads, g)
    d_fake, g = cls.backward(cache_cf, dz_fake)
    merge_grads(cls_grads, g)
    d_r_cls, g = gen.backward(cache_gen, d_fake)
    merge_grads(cls_grads, g)
    d_r_cls = d_r_cls[:, :d_emb]

    return R2IResult(
        gen_loss, disc_loss, cls_loss,
        HeadLossGrads(gen_grads, d_r_gen),
        HeadLossGrads(disc_grads, d_r_disc),
        HeadLossGrads(cls_grads, d_r_cls),
    )


def i2r_losses(batch, emb: EmbeddingBatch, params: ModelParams) -> I2RResult:
    """Image-to-recipe consistency: mean elementwise binary cross entropy of
    the ingredient logits against the multi-hot, plus class cross entropy,
    both on the final image embedding."""
    multi_hot = np.asarray(batch.ingredient_multi_hot)
    labels = np.asarray(batch.class_ids)
    ing = params.stacks["ing_i2r"]
    cls = params.stacks["cls_i2r"]
    if multi_hot.shape[1] != ing.n_out:
        raise DimensionError(
            f"multi-hot width {multi_hot.shape[1]} does not match ingredient vocabulary {ing.n_out}"
        )
    batch_n, n_slots = multi_hot.shape

    logits, cache_ing = ing.forward(emb.v_final)
    # BCE with logits: softplus(z) - z * t, averaged over all B*M slots
    ingredient_loss = float((_softplus(logits) - logits * multi_hot).mean())
    d_logits = (_sigmoid(logits) - multi_hot) / (batch_n * n_slots)
    ing_grads: GradDict = {}
    d_v_ing, g = ing.backward(cache_ing, d_logits)
    merge_grads(ing_grads, g)

    z, cache_cls = cls.forward(emb.v_final)
    cls_loss, dz = _softmax_ce(z, labels, 1.0)
    cls_grads: GradDict = {}
    d_v_cls, g = cls.backward(cache_cls, dz)
    merge_grads(cls_grads, g)

    return I2RResult(
        ingredient_loss, cls_loss,
        HeadLossGrads(ing_grads, d_v_ing),
        HeadLossGrads(cls_grads, d_v_cls),
    )


# --- composition ----------------------------------------------------------


@dataclass
class LossBreakdown:
    """Encoder-side loss terms; the discriminator/critic pieces are owned by
    their own players and excluded from the total."""

    l_ret: float = 0.0
    l_ma: float = 0.0
    l_g_r2i: float = 0.0
    l_c_r2i: float = 0.0
    l_g_i2r: float = 0.0
    l_c_i2r: float = 0.0
    total: float = 0.0

    @property
    def l_r2i(self) -> float:
        return self.l_g_r2i + self.l_c_r2i

    @property
    def l_i2r(self) -> float:
        return self.l_g_i2r + self.l_c_i2r


def total_loss(parts: LossBreakdown, hp) -> float:
    """Weighted total: l_ret + lambda1 * l_ma + lambda2 * (l_r2i + l_i2r)."""
    terms = {
        "l_ret": parts.l_ret,
        "l_ma": parts.l_ma,
        "l_r2i": parts.l_r2i,
        "l_i2r": parts.l_i2r,
    }
    for name, t in terms.items():
        if not math.isfinite(t):
            raise NonFiniteError(f"total loss: component {name} is {t}")
    return parts.l_ret + hp.lambda1 * parts.l_ma + hp.lambda2 * (parts.l_r2i + parts.l_i2r)


@dataclass
class JointObjective:
    breakdown: LossBreakdown
    grads: GradDict
    triplet: TripletResult
    wasserstein_est: float


def joint_objective(params: ModelParams, batch, hp, ablation, eps: np.ndarray | None = None) -> JointObjective:
    """The encoder-player objective for one batch: retrieval loss plus the
    enabled weighted alignment / translation terms, with gradients for every
    parameter group the objective touches. Disabled arms contribute zero."""
    emb, cache = embed_batch(params, batch)
    ids = np.asarray(batch.recipe_ids)

    if ablation.use_hard_mining:
        ret = triplet_loss_hard(emb, ids, hp.alpha)
    else:
        ret = triplet_loss_all(emb, ids, hp.alpha)
    d_v_final = ret.d_v_final.copy()
    d_r_final = ret.d_r_final.copy()
    d_v_pen = None
    d_r_pen = None
    grads: GradDict = {}
    parts = LossBreakdown(l_ret=ret.value)
    w_est = 0.0

    if ablation.use_ma:
        ma = modality_alignment_losses(emb, params, hp.alignment_mode, hp.lambda_gp, eps)
        parts.l_ma = ma.encoder_loss
        w_est = ma.wasserstein_est
        d_v_pen = hp.lambda1 * ma.encoder_d_v_pen
        d_r_pen = hp.lambda1 * ma.encoder_d_r_pen
        merge_grads(grads, ma.encoder_grads, hp.lambda1)

    if ablation.use_r2i:
        r2 = r2i_losses(batch, emb, params)
        parts.l_g_r2i = r2.gen_loss
        parts.l_c_r2i = r2.cls_loss
        d_r_final += hp.lambda2 * (r2.gen.d_embedding + r2.cls.d_embedding)
        merge_grads(grads, r2.gen.param_grads, hp.lambda2)
        merge_grads(grads, r2.cls.param_grads, hp.lambda2)

    if ablation.use_i2r:
        i2 = i2r_losses(batch, emb, params)
        parts.l_g_i2r = i2.ingredient_loss
        parts.l_c_i2r = i2.cls_loss
        d_v_final += hp.lambda2 * (i2.ingredient.d_embedding + i2.cls.d_embedding)
        merge_grads(grads, i2.ingredient.param_grads, hp.lambda2)
        merge_grads(grads, i2.cls.param_grads, hp.lambda2)

    emb_grads = embed_backward(params, emb, cache, d_v_final, d_r_final, d_v_pen, d_r_pen)
    merge_grads(grads, emb_grads)
    parts.total = total_loss(parts, hp)
    return JointObjective(parts, grads, ret, w_est)
