"""Deep clustering with the soft silhouette objective.

Stage 1 pretrains the autoencoder on reconstruction, k-means on the
embeddings seeds the RBF head, Stage 2 trains all three networks on
reconstruction + lambda1 * (1 - Sf) + lambda2 * entropy over mini-batches,
and inference takes the argmax of the head's probabilities.

Training entry points take a bare feature matrix; ground-truth labels only
ever reach :func:`evaluate`.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metrics
from .kmeans import KMeansResult, kmeans
from .nn import (
    AdamState,
    DEFAULT_HIDDEN,
    LayerSpec,
    NetworkParams,
    adam_step,
    autoencoder_specs,
    forward_cluster_head,
    forward_decoder,
    forward_encoder,
    he_init,
    loss_and_grads,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NumericalDivergence(ArithmeticError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class TrainConfig:
    k: int = 4
    m: int = 10
    lambda1: float = 0.01
    lambda2: float = 0.01
    pretrain_epochs: int = 1000
    train_epochs: int = 100
    lr_pretrain: float = 5e-4
    lr_train: float = 5e-4
    weight_decay_pretrain: float = 1e-5
    batch_size: int = 256
    temperature: float = 20.0
    seed: int = 0
    sigma_init: float = 0.1
    rbf_restarts: int = 10
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    freeze_sigma: bool = False
    early_stop: bool = False
    # full-data Sf / entropy diagnostics every this many Stage 2 epochs
    eval_every: int = 10

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> "TrainConfig":
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.m < 1:
            raise ConfigError("embedding dim m must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        for name in ("lr_pretrain", "lr_train", "temperature", "sigma_init"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("pretrain_epochs", "train_epochs", "weight_decay_pretrain"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.rbf_restarts < 1 or self.eval_every < 1:
            raise ConfigError("rbf_restarts and eval_every must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# the synthetic benchmark has a 2-d latent structure
SYNTHETIC_EMBED_DIM = 2


@dataclass
class EpochRecord:
    epoch: int
    rec: float
    cl: float
    reg: float
    total: float
    wall_time: float
    skipped_batches: int = 0
    sf_full: float | None = None
    entropy_full: float | None = None


@dataclass
class TrainingTrace:
    stage: str
    records: list[EpochRecord] = field(default_factory=list)
    # full-data reconstruction before the first and after the last epoch
    initial_rec: float | None = None
    final_rec: float | None = None
    initial_sf: float | None = None
    final_sf: float | None = None
    initial_entropy: float | None = None
    final_entropy: float | None = None
    stopped_early: bool = False

    def to_lines(self) -> list[dict]:
        return [asdict(r) for r in self.records]


@dataclass
class ClusteringSolution:
    labels: np.ndarray
    probs: np.ndarray
    embeddings: np.ndarray


# ---------------------------------------------------------------------------
# helpers


def _rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage])


def epoch_batches(n: int, batch_size: int, rng, min_tail: int = 1) -> list[np.ndarray]:
    """Shuffle and cut into batches; a short last batch with fewer than
    ``min_tail`` rows is dropped."""
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if out and len(out[-1]) < batch_size and len(out[-1]) < min_tail:
        out.pop()
    return out


def build_network(d: int, cfg: TrainConfig) -> NetworkParams:
    enc, dec = autoencoder_specs(d, cfg.m, cfg.hidden)
    head = LayerSpec("rbf_softmax", cfg.m, cfg.k, temperature=cfg.temperature)
    return he_init(enc, dec, head, seed=cfg.seed, sigma_init=cfg.sigma_init)


def _check_features(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("features must be an n x d matrix")
    return x


def full_reconstruction(params: NetworkParams, x, batch_size: int = 4096) -> float:
    total = 0.0
    for lo in range(0, len(x), batch_size):
        xb = x[lo:lo + batch_size]
        total += float(((forward_decoder(params, forward_encoder(params, xb)) - xb) ** 2).sum())
    return total / len(x)


def _check_finite(value: float, trace: TrainingTrace, where: str):
    if not math.isfinite(value):
        raise NumericalDivergence(f"non-finite loss during {where}", trace)


# ---------------------------------------------------------------------------
# Stage 1


def pretrain(x, cfg: TrainConfig, params: NetworkParams | None = None):
    """Reconstruction-only Adam training of encoder and decoder.

    Returns ``(params, trace)``. The head blocks are never touched.
    """
    cfg.validate()
    x = _check_features(x)
    params = build_network(x.shape[1], cfg) if params is None else params.copy()
    state = AdamState(lr=cfg.lr_pretrain, weight_decay=cfg.weight_decay_pretrain)
    rng = _rng(cfg.seed, 1)
    trace = TrainingTrace("pretrain", initial_rec=full_reconstruction(params, x))
    start = time.perf_counter()
    for epoch in range(1, cfg.pretrain_epochs + 1):
        losses = []
        for idx in epoch_batches(len(x), cfg.batch_size, rng):
            parts, grads = loss_and_grads(params, x[idx])
            _check_finite(parts.rec, trace, f"pretraining epoch {epoch}")
            adam_step(params, grads, state)
            losses.append(parts.rec)
        rec = float(np.mean(losses))
        trace.records.append(EpochRecord(epoch, rec, 0.0, 0.0, rec, time.perf_counter() - start))
        if epoch % 50 == 0:
            log.info("pretrain epoch %d  L_rec %.5f", epoch, rec)
    trace.final_rec = full_reconstruction(params, x)
    return params, trace


# ---------------------------------------------------------------------------
# RBF head initialisation


def embed(params: NetworkParams, x, batch_size: int = 4096) -> np.ndarray:
    x = _check_features(x)
    return np.concatenate([forward_encoder(params, x[lo:lo + batch_size])
                           for lo in range(0, len(x), batch_size)]) if len(x) else np.empty((0, params.embed_dim))


def init_cluster_head(params: NetworkParams, x, cfg: TrainConfig):
    """Place RBF centers at the k-means centroids of the embeddings and reset
    the widths. Returns ``(params, kmeans_result)``; the k-means labels are
    the AE + k-means baseline."""
    cfg.validate()
    x = _check_features(x)
    if cfg.k >= len(x):
        raise ConfigError(f"k={cfg.k} must be smaller than the number of points ({len(x)})")
    z = embed(params, x)
    km = kmeans(z, cfg.k, restarts=cfg.rbf_restarts, seed=cfg.seed)
    params = params.copy()
    params.blocks["head.centers"] = km.centers.copy()
    params.blocks["head.log_sigma"] = np.full(cfg.k, np.log(cfg.sigma_init))
    return params, km


# ---------------------------------------------------------------------------
# Stage 2


def _diagnostics(params, x):
    sol = infer(params, x)
    sf = metrics.soft_silhouette_points(sol.embeddings, sol.probs).total
    return sf, metrics.entropy_regularizer(sol.probs)


def train(params: NetworkParams, x, cfg: TrainConfig):
    """Joint training of encoder, decoder and head on the total loss.

    The soft silhouette is taken within each mini-batch. A trailing batch
    shorter than ``2 * k`` rows is dropped. Returns ``(params, trace)``.
    """
    cfg.validate()
    x = _check_features(x)
    params = params.copy()
    state = AdamState(lr=cfg.lr_train)
    rng = _rng(cfg.seed, 2)
    clustering = cfg.lambda1 != 0.0 or cfg.lambda2 != 0.0
    trace = TrainingTrace("train", initial_rec=full_reconstruction(params, x))
    if clustering:
        trace.initial_sf, trace.initial_entropy = _diagnostics(params, x)
    start = time.perf_counter()
    history = []
    for epoch in range(1, cfg.train_epochs + 1):
        sums = np.zeros(4)
        skipped = 0
        batches = epoch_batches(len(x), cfg.batch_size, rng, min_tail=2 * cfg.k)
        for idx in batches:
            parts, grads = loss_and_grads(params, x[idx], cfg.lambda1, cfg.lambda2,
                                          freeze_sigma=cfg.freeze_sigma)
            _check_finite(parts.total, trace, f"training epoch {epoch}")
            skipped += parts.degenerate
            adam_step(params, grads, state)
            sums += (parts.rec, parts.cl, parts.reg, parts.total)
        rec, cl, reg, _ = sums / max(len(batches), 1)
        rec_ = EpochRecord(epoch, rec, cl, reg, rec + cfg.lambda1 * cl + cfg.lambda2 * reg,
                           time.perf_counter() - start, skipped)
        if clustering and (epoch % cfg.eval_every == 0 or epoch == cfg.train_epochs):
            rec_.sf_full, rec_.entropy_full = _diagnostics(params, x)
        trace.records.append(rec_)
        log.info("train epoch %d  total %.5f  rec %.5f  1-Sf %.4f  H %.4f",
                 epoch, rec_.total, rec, cl, reg)
        history.append(rec_.total)
        if cfg.early_stop and len(history) > 10:
            prev = history[-11]
            if prev - history[-1] < 1e-5 * abs(prev):
                trace.stopped_early = True
                break
    trace.final_rec = full_reconstruction(params, x)
    if clustering:
        trace.final_sf, trace.final_entropy = _diagnostics(params, x)
    return params, trace


# ---------------------------------------------------------------------------
# Stage 3 and evaluation


def infer(params: NetworkParams, x, batch_size: int = 4096) -> ClusteringSolution:
    """Embeddings, head probabilities and argmax labels for every row."""
    z = embed(params, x, batch_size)
    probs = np.concatenate([forward_cluster_head(params, z[lo:lo + batch_size])
                            for lo in range(0, len(z), batch_size)])
    return ClusteringSolution(probs.argmax(axis=1), probs, z)


def evaluate(solution: ClusteringSolution, truth=None, k: int | None = None) -> dict:
    """External (NMI, ARI) and internal (S, Sf on the embeddings) scores."""
    k = solution.probs.shape[1] if k is None else k
    out = {}
    if truth is not None:
        out["nmi"] = metrics.nmi(truth, solution.labels)
        out["ari"] = metrics.ari(truth, solution.labels)
    out["sf"] = metrics.soft_silhouette_points(solution.embeddings, solution.probs).total
    if len(np.unique(solution.labels)) >= 2:
        out["silhouette"] = metrics.hard_silhouette_points(solution.embeddings, solution.labels, k).total
    else:
        out["silhouette"] = None
    return out


def mean_sd(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(list(values), dtype=np.float64)
    return float(v.mean()), float(v.std())


@dataclass
class RunResult:
    seed: int
    params: NetworkParams
    pretrained: NetworkParams
    solution: ClusteringSolution
    baseline: KMeansResult
    pretrain_trace: TrainingTrace
    train_trace: TrainingTrace
    metrics: dict


def run_dcss(x, cfg: TrainConfig, truth=None, pretrained: NetworkParams | None = None) -> RunResult:
    """Stages 1-3 for one seed, plus the AE + k-means baseline scores."""
    if pretrained is None:
        params, pre_trace = pretrain(x, cfg)
    else:
        params, pre_trace = pretrained.copy(), TrainingTrace("pretrain")
    stage1 = params.copy()
    params, km = init_cluster_head(params, x, cfg)
    params, tr_trace = train(params, x, cfg)
    sol = infer(params, x)
    report = evaluate(sol, truth, cfg.k)
    report["sf_initial"] = tr_trace.initial_sf
    report["entropy_initial"] = tr_trace.initial_entropy
    report["entropy_final"] = tr_trace.final_entropy
    report["rec_pretrain_initial"] = pre_trace.initial_rec
    report["rec_pretrain_final"] = pre_trace.final_rec
    if truth is not None:
        report["ae_kmeans_nmi"] = metrics.nmi(truth, km.labels)
        report["ae_kmeans_ari"] = metrics.ari(truth, km.labels)
    return RunResult(cfg.seed, params, stage1, sol, km, pre_trace, tr_trace, report)
