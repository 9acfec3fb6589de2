"""Attractor selection from a bank of K stored centers and mask estimation.

For a requested source count C every C-of-K subset of the bank seeds a
short k-means run over the embeddings; the refined set whose closest pair
of centroids is farthest apart wins. Masks are the softmax over sources of
embedding/attractor dot products.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .numcore import Layer, softmax


class CapacityError(ValueError):
    pass


def assign(v, centers):
    """Index of the nearest center (squared Euclidean) for every row of ``v``."""
    d = np.sum(centers * centers, axis=1)[None, :] - 2.0 * (v @ centers.T)
    return np.argmin(d, axis=1)


def kmeans_refine(v, centers, iters=1, return_support=False):
    """Lloyd iterations starting from ``centers``; empty clusters keep their center.

    With ``return_support`` also returns, per centroid, the boolean row mask
    that defined its final value (``None`` when it is still the initial
    center).
    """
    if iters < 1:
        raise ValueError("need at least one k-means iteration")
    cent = np.array(centers, dtype=v.dtype, copy=True)
    support = [None] * len(cent)
    for _ in range(iters):
        labels = assign(v, cent)
        for c in range(len(cent)):
            rows = labels == c
            if rows.any():
                cent[c] = v[rows].mean(axis=0)
                support[c] = rows
    return (cent, support) if return_support else cent


def min_pairwise_distance(points):
    if len(points) < 2:
        return 0.0
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(d[np.triu_indices(len(points), 1)].min())


@dataclass
class AttractorSet:
    centroids: np.ndarray  # C x L
    subset: tuple
    score: float
    support: list


def select_attractors(v, n_sources, bank, iters=1):
    """Best C-of-K refined centroid set by maximin separation.

    Ties go to the lexicographically first subset.
    """
    k = len(bank)
    if not 1 <= n_sources <= k:
        raise CapacityError(f"requested {n_sources} sources but the bank holds {k} centers")
    best = None
    for subset in combinations(range(k), n_sources):
        cent, support = kmeans_refine(v, bank[list(subset)], iters, return_support=True)
        score = min_pairwise_distance(cent.astype(np.float64))
        if best is None or score > best.score:
            best = AttractorSet(cent, subset, score, support)
    return best


def compute_masks(v, attractors):
    """Softmax over sources of ``v @ attractors.T``; returns (N, C)."""
    return softmax(v @ attractors.T, axis=1)


def masks_to_maps(m, n_basis):
    """(N, C) with N = T * n_basis -> (C, n_basis, T)."""
    n, c = m.shape
    t = n // n_basis
    return m.T.reshape(c, t, n_basis).transpose(0, 2, 1)


def maps_to_masks(g, n_basis):
    c, f, t = g.shape
    return g.transpose(0, 2, 1).reshape(c, t * f).T


class AttractorLayer(Layer):
    """Differentiable wrapper: embeddings -> mask maps (C, n_basis, T).

    Centroids are means over assigned rows, so gradients reach the
    embeddings through them; a bank center receives gradient only while it
    survives unrefined (its cluster stayed empty).
    """

    def __init__(self, centers, iters=1):
        super().__init__()
        self.params["centers"] = centers
        self.iters = iters

    @classmethod
    def init(cls, n_centers, emb_dim, rng, iters=1, dtype=np.float32):
        centers = (rng.standard_normal((n_centers, emb_dim)) / np.sqrt(emb_dim)).astype(dtype)
        return cls(centers, iters)

    def forward(self, v, n_sources, n_basis):
        sel = select_attractors(v, n_sources, self.params["centers"], self.iters)
        m = compute_masks(v, sel.centroids)
        self._cache = (v, sel, m, n_basis)
        self.selection = sel
        return masks_to_maps(m, n_basis)

    def backward(self, g_maps):
        v, sel, m, n_basis = self._cache
        gm = maps_to_masks(g_maps, n_basis)
        gz = m * (gm - np.sum(gm * m, axis=1, keepdims=True))
        a = sel.centroids
        gv = gz @ a
        ga = gz.T @ v
        gbank = np.zeros_like(self.params["centers"])
        for c, rows in enumerate(sel.support):
            if rows is None:
                gbank[sel.subset[c]] += ga[c]
            else:
                gv[rows] += ga[c] / rows.sum()
        self._accumulate("centers", gbank)
        return gv
