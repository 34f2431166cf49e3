"""Reverse-mode gradients of the joint clustering loss.

The loss on a batch is

    L_rec + lambda1 * (1 - Sf) + lambda2 * H

with ``Sf`` the soft silhouette of the head's probabilities over the
within-batch Euclidean distances of the embeddings and ``H`` the mean
membership entropy. Layer rules are hand-derived; the only contract is
agreement with finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import metrics
from .layers import (
    NetworkParams,
    backward_stack,
    forward_stack,
    rbf_softmax_backward,
    rbf_softmax_forward,
)


@dataclass
class LossParts:
    rec: float
    cl: float
    reg: float
    total: float
    sf: float
    degenerate: bool = False


def distance_backward(z, dist, grad_dist):
    """Chain a symmetric pair gradient on ``dist = pairwise_euclidean(z)``
    back to ``z``. Coincident points get a zero subgradient."""
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(dist > 0, grad_dist / dist, 0.0)
    return w.sum(axis=1)[:, None] * z - w @ z


def loss_and_grads(params: NetworkParams, x, lambda1: float = 0.0, lambda2: float = 0.0,
                   *, freeze_sigma: bool = False, eps_mass: float = metrics.EPS_MASS):
    """Forward the batch through encoder, decoder and head and backpropagate.

    Returns ``(LossParts, grads)`` where ``grads`` maps block names to arrays.
    Head blocks are present only when a clustering term is active. When the
    soft silhouette is degenerate on this batch the clustering term is
    dropped (zero value and gradient) and ``parts.degenerate`` is set.
    """
    blocks = params.blocks
    b = x.shape[0]
    z, enc_cache = forward_stack(blocks, "enc", params.encoder, x)
    xhat, dec_cache = forward_stack(blocks, "dec", params.decoder, z)

    resid = xhat - x
    rec = float((resid**2).sum() / b)
    grads: dict[str, np.ndarray] = {}
    g_z = backward_stack(blocks, "dec", params.decoder, dec_cache, 2.0 * resid / b, grads,
                         need_input_grad=True)

    cl = reg = 0.0
    sf = float("nan")
    degenerate = False
    if lambda1 != 0.0 or lambda2 != 0.0:
        centers = blocks["head.centers"]
        temp = params.head.temperature
        probs, aux = rbf_softmax_forward(centers, blocks["head.log_sigma"], temp, z)
        g_probs = np.zeros_like(probs)

        if lambda1 != 0.0:
            dist = metrics.pairwise_euclidean(z)
            try:
                sf, g_sf_p, g_sf_d = metrics.soft_silhouette_grad(dist, probs, eps_mass)
            except metrics.DegenerateSilhouetteError:
                degenerate = True
            else:
                cl = 1.0 - sf
                g_probs -= lambda1 * g_sf_p
                g_z = g_z + distance_backward(z, dist, -lambda1 * g_sf_d)

        if lambda2 != 0.0:
            reg = metrics.entropy_regularizer(probs)
            g_probs += lambda2 * metrics.entropy_regularizer_grad(probs)

        gz_head, g_c, g_ls = rbf_softmax_backward(centers, temp, z, probs, aux, g_probs)
        g_z = g_z + gz_head
        grads["head.centers"] = g_c
        grads["head.log_sigma"] = np.zeros_like(g_ls) if freeze_sigma else g_ls

    backward_stack(blocks, "enc", params.encoder, enc_cache, g_z, grads)
    total = rec + lambda1 * cl + lambda2 * reg
    return LossParts(rec, cl, reg, total, sf, degenerate), grads


def loss_value(params: NetworkParams, x, lambda1: float = 0.0, lambda2: float = 0.0,
               eps_mass: float = metrics.EPS_MASS) -> float:
    """Forward-only total loss, used by gradient checks."""
    blocks = params.blocks
    z, _ = forward_stack(blocks, "enc", params.encoder, x)
    xhat, _ = forward_stack(blocks, "dec", params.decoder, z)
    total = float(((xhat - x) ** 2).sum() / x.shape[0])
    if lambda1 != 0.0 or lambda2 != 0.0:
        probs, _ = rbf_softmax_forward(blocks["head.centers"], blocks["head.log_sigma"],
                                       params.head.temperature, z)
        if lambda1 != 0.0:
            rep = metrics.soft_silhouette(metrics.pairwise_euclidean(z), probs, eps_mass)
            if not rep.degenerate:
                total += lambda1 * (1.0 - rep.total)
        if lambda2 != 0.0:
            total += lambda2 * metrics.entropy_regularizer(probs)
    return total
