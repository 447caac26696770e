"""Independent reference implementations used as test oracles. These stay
scalar/loop-based on purpose: they must not share code with the library
paths they check."""

import math

import numpy as np


def oracle_triplet_hard(v, r, ids, alpha):
    """Enumerate all candidates per anchor; positive = same-recipe candidate
    at max distance, negative = different-recipe candidate at min distance,
    lowest index on ties; mean hinge over anchors that have a negative."""

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    total, contributing = 0.0, 0
    for anchors, cands in ((v, r), (r, v)):
        for i in range(len(ids)):
            negatives = [j for j in range(len(ids)) if ids[j] != ids[i]]
            if not negatives:
                continue
            contributing += 1
            positives = [j for j in range(len(ids)) if ids[j] == ids[i]]
            best_p, best_pd = None, -1.0
            for j in positives:
                d = dist(anchors[i], cands[j])
                if d > best_pd:
                    best_p, best_pd = j, d
            best_n, best_nd = None, math.inf
            for j in negatives:
                d = dist(anchors[i], cands[j])
                if d < best_nd:
                    best_n, best_nd = j, d
            total += max(0.0, best_pd - best_nd + alpha)
    if contributing == 0:
        raise AssertionError("degenerate oracle batch")
    return total / contributing


def oracle_triplet_all(v, r, ids, alpha):
    """Mean hinge over every valid (anchor, positive, negative) triple."""

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    total, count = 0.0, 0
    for anchors, cands in ((v, r), (r, v)):
        for i in range(len(ids)):
            for p in range(len(ids)):
                if ids[p] != ids[i]:
                    continue
                for n in range(len(ids)):
                    if ids[n] == ids[i]:
                        continue
                    count += 1
                    total += max(
                        0.0, dist(anchors[i], cands[p]) - dist(anchors[i], cands[n]) + alpha
                    )
    return total / count


def sort_oracle_rank(query, candidates, truth_index):
    """Stable sort on (distance, index); rank = truth's 1-based position."""
    d = ((candidates - query) ** 2).sum(axis=1)
    order = sorted(range(len(d)), key=lambda j: (d[j], j))
    return order.index(truth_index) + 1


def random_triplet_batch(rng, with_duplicates, max_b=17):
    """Random batch; duplicated recipe ids share their recipe embedding."""
    b = int(rng.integers(2, max_b))
    dim = int(rng.integers(1, 6))
    if with_duplicates and b >= 3:
        n_recipes = int(rng.integers(2, b))
        ids = np.sort(rng.integers(0, n_recipes, size=b))
        if len(np.unique(ids)) < 2:
            ids[0] = (ids[0] + 1) % n_recipes if n_recipes > 1 else 1
    else:
        ids = np.arange(b)
    r_by_id = {int(i): rng.normal(size=dim) for i in np.unique(ids)}
    r = np.stack([r_by_id[int(i)] for i in ids])
    v = rng.normal(size=(b, dim))
    return v, r, ids
