"""Fully-connected autoencoder and RBF clustering head in plain numpy."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

KINDS = ("fc", "relu", "tanh", "rbf_softmax")

# tabular AE widths: d -> 500 -> 500 -> 2000 -> m and back
DEFAULT_HIDDEN = (500, 500, 2000)


class NetworkSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    temperature: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetworkSpecError(f"unknown layer kind {self.kind!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise NetworkSpecError(f"layer dims must be positive: {self}")
        if self.kind in ("relu", "tanh") and self.in_dim != self.out_dim:
            raise NetworkSpecError(f"activation must preserve width: {self}")
        if self.kind == "rbf_softmax" and not (self.temperature and self.temperature > 0):
            raise NetworkSpecError("rbf_softmax needs a positive temperature")

    def to_dict(self) -> dict:
        return asdict(self)


def autoencoder_specs(d: int, m: int, hidden=DEFAULT_HIDDEN):
    """Encoder and decoder layer lists: ReLU hidden layers, tanh embedding,
    linear reconstruction."""
    widths = [d, *hidden, m]
    enc, dec = [], []
    for i in range(len(widths) - 1):
        enc.append(LayerSpec("fc", widths[i], widths[i + 1]))
        last = i == len(widths) - 2
        enc.append(LayerSpec("tanh" if last else "relu", widths[i + 1], widths[i + 1]))
    back = widths[::-1]
    for i in range(len(back) - 1):
        dec.append(LayerSpec("fc", back[i], back[i + 1]))
        if i < len(back) - 2:
            dec.append(LayerSpec("relu", back[i + 1], back[i + 1]))
    return enc, dec


def check_chain(specs: list[LayerSpec]) -> None:
    for prev, nxt in zip(specs, specs[1:]):
        if prev.out_dim != nxt.in_dim:
            raise NetworkSpecError(f"dim mismatch between {prev} and {nxt}")


@dataclass
class NetworkParams:
    encoder: list[LayerSpec]
    decoder: list[LayerSpec]
    head: LayerSpec | None
    blocks: dict[str, np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_dim

    @property
    def embed_dim(self) -> int:
        return self.encoder[-1].out_dim

    def copy(self) -> "NetworkParams":
        return NetworkParams(list(self.encoder), list(self.decoder), self.head,
                             {k: v.copy() for k, v in self.blocks.items()})

    def sigma(self) -> np.ndarray:
        return np.exp(self.blocks["head.log_sigma"])

    def spec_dict(self) -> dict:
        return {
            "encoder": [s.to_dict() for s in self.encoder],
            "decoder": [s.to_dict() for s in self.decoder],
            "head": None if self.head is None else self.head.to_dict(),
        }

    @classmethod
    def from_spec_dict(cls, spec: dict, blocks: dict) -> "NetworkParams":
        head = spec.get("head")
        return cls([LayerSpec(**s) for s in spec["encoder"]],
                   [LayerSpec(**s) for s in spec["decoder"]],
                   None if head is None else LayerSpec(**head),
                   dict(blocks))


def he_init(encoder, decoder, head=None, *, seed: int, sigma_init: float = 0.1,
            dtype=np.float64) -> NetworkParams:
    """He-normal weights (variance 2/fan_in), zero biases.

    RBF centers get the same He draw and are normally overwritten from
    k-means; widths start at ``sigma_init``.
    """
    check_chain(encoder)
    check_chain(decoder)
    if encoder[-1].out_dim != decoder[0].in_dim or decoder[-1].out_dim != encoder[0].in_dim:
        raise NetworkSpecError("encoder and decoder do not mirror each other")
    if head is not None:
        if head.kind != "rbf_softmax" or head.in_dim != encoder[-1].out_dim:
            raise NetworkSpecError("cluster head must be rbf_softmax on the embedding")
        if sigma_init <= 0:
            raise NetworkSpecError("sigma_init must be positive")
    rng = np.random.default_rng(seed)
    blocks: dict[str, np.ndarray] = {}
    for prefix, specs in (("enc", encoder), ("dec", decoder)):
        for i, s in enumerate(specs):
            if s.kind == "fc":
                std = np.sqrt(2.0 / s.in_dim)
                blocks[f"{prefix}.{i}.weight"] = (rng.standard_normal((s.in_dim, s.out_dim)) * std).astype(dtype)
                blocks[f"{prefix}.{i}.bias"] = np.zeros(s.out_dim, dtype=dtype)
    if head is not None:
        std = np.sqrt(2.0 / head.in_dim)
        blocks["head.centers"] = (rng.standard_normal((head.out_dim, head.in_dim)) * std).astype(dtype)
        blocks["head.log_sigma"] = np.full(head.out_dim, np.log(sigma_init), dtype=dtype)
    return NetworkParams(list(encoder), list(decoder), head, blocks)


# ---------------------------------------------------------------------------
# forward / backward over a layer stack


def forward_stack(blocks, prefix, specs, x):
    cache = []
    h = x
    for i, s in enumerate(specs):
        cache.append(h)
        if s.kind == "fc":
            h = h @ blocks[f"{prefix}.{i}.weight"] + blocks[f"{prefix}.{i}.bias"]
        elif s.kind == "relu":
            h = np.maximum(h, 0.0)
        elif s.kind == "tanh":
            h = np.tanh(h)
        else:
            raise NetworkSpecError(f"{s.kind} not allowed inside an AE stack")
    cache.append(h)
    return h, cache


def backward_stack(blocks, prefix, specs, cache, grad_out, grads, need_input_grad=False):
    g = grad_out
    for i in range(len(specs) - 1, -1, -1):
        s = specs[i]
        x_in, y_out = cache[i], cache[i + 1]
        if s.kind == "fc":
            grads[f"{prefix}.{i}.weight"] = x_in.T @ g
            grads[f"{prefix}.{i}.bias"] = g.sum(axis=0)
            if i == 0 and not need_input_grad:
                return None
            g = g @ blocks[f"{prefix}.{i}.weight"].T
        elif s.kind == "relu":
            g = g * (x_in > 0)
        elif s.kind == "tanh":
            g = g * (1.0 - y_out**2)
    return g


def _check_input(x, dim, what):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must be Bx{dim}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def forward_encoder(params: NetworkParams, x) -> np.ndarray:
    x = _check_input(x, params.input_dim, "input batch")
    return forward_stack(params.blocks, "enc", params.encoder, x)[0]


def forward_decoder(params: NetworkParams, z) -> np.ndarray:
    z = _check_input(z, params.embed_dim, "embedding batch")
    return forward_stack(params.blocks, "dec", params.decoder, z)[0]


# ---------------------------------------------------------------------------
# RBF clustering head


def rbf_softmax_forward(centers, log_sigma, temperature, z):
    """Returns probabilities and the intermediates the backward pass needs."""
    sigma2 = np.exp(2.0 * log_sigma)
    if not np.all(sigma2 > 0):
        raise ValueError("RBF widths must be positive")
    diff = z[:, None, :] - centers[None, :, :]
    r2 = np.einsum("ikj,ikj->ik", diff, diff)
    phi = np.exp(-r2 / (2.0 * sigma2))
    logits = temperature * phi
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, (phi, r2, sigma2)


def rbf_softmax_backward(centers, temperature, z, probs, aux, grad_probs):
    """Gradients w.r.t. (z, centers, log_sigma) given dL/dprobs."""
    phi, r2, sigma2 = aux
    g_logits = probs * (grad_probs - (probs * grad_probs).sum(axis=1, keepdims=True))
    g_phi = temperature * g_logits
    A = g_phi * phi / sigma2
    row = A.sum(axis=1)
    g_z = A @ centers - row[:, None] * z
    g_c = A.T @ z - A.sum(axis=0)[:, None] * centers
    g_ls = (A * r2).sum(axis=0)
    return g_z, g_c, g_ls


def forward_cluster_head(params: NetworkParams, z) -> np.ndarray:
    if params.head is None:
        raise NetworkSpecError("network has no cluster head")
    z = _check_input(z, params.embed_dim, "embedding batch")
    probs, _ = rbf_softmax_forward(params.blocks["head.centers"], params.blocks["head.log_sigma"],
                                   params.head.temperature, z)
    return probs


def reconstruction_loss(x, xhat) -> float:
    """Batch mean of squared Euclidean reconstruction errors."""
    x = np.asarray(x)
    xhat = np.asarray(xhat)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xhat.shape}")
    return float(((x - xhat) ** 2).sum() / x.shape[0])
