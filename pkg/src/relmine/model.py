"""Two-tower linear embedding model with analytic gradients and SGD.

Each tower is a single projection matrix followed by L2 normalization, so
batch similarities are plain dot products of unit vectors. Gradients of
the mined-triplet loss are derived by hand through the cosine and the
normalization, holding the mined indices fixed, which keeps the whole
model checkable against finite differences.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loss import LossBreakdown, Margins, anchor_terms, batch_loss
from .mining import MinedTriplets, Strategy, mine_batch
from .semantics import relevance_matrix

# rng stream tags so parameter init, batch order and caption choice never share draws
_INIT_STREAM = 0
_EPOCH_STREAM = 1


class TrainingDivergedError(RuntimeError):
    pass


class IncompatibleCheckpointError(ValueError):
    pass


class DegenerateEmbeddingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Projection weights: video features -> embedding, text features -> embedding."""

    w_video: np.ndarray
    w_text: np.ndarray

    def __post_init__(self):
        for name, w in (("w_video", self.w_video), ("w_text", self.w_text)):
            if w.ndim != 2:
                raise ValueError(f"{name} must be a matrix, got ndim={w.ndim}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"{name} contains non-finite entries")
        if self.w_video.shape[1] != self.w_text.shape[1] or self.w_video.shape[1] < 1:
            raise ValueError(
                f"towers must share an embedding width >= 1, got "
                f"{self.w_video.shape} and {self.w_text.shape}"
            )

    @property
    def embed_dim(self) -> int:
        return self.w_video.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.w_video.copy(), self.w_text.copy())


@dataclass(frozen=True)
class GradientSet:
    grad_w_video: np.ndarray
    grad_w_text: np.ndarray


def init_params(d_video: int, d_text: int, embed_dim: int, rng: np.random.Generator) -> ModelParams:
    """Uniform init in [-1/sqrt(d_in), 1/sqrt(d_in)] per tower."""
    bound_v = 1.0 / np.sqrt(d_video)
    bound_t = 1.0 / np.sqrt(d_text)
    return ModelParams(
        w_video=rng.uniform(-bound_v, bound_v, size=(d_video, embed_dim)),
        w_text=rng.uniform(-bound_t, bound_t, size=(d_text, embed_dim)),
    )


def _normalize_rows(z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return z / safe


def embed(features: np.ndarray, w: np.ndarray) -> np.ndarray:
    """L2-normalized linear projection; accepts a single vector or a batch
    of row vectors. A zero projection stays the zero vector and raises a
    degenerate-embedding warning."""
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != w.shape[0]:
        raise ValueError(
            f"feature dimension {features.shape[-1]} does not match projection input {w.shape[0]}"
        )
    z = features @ w
    if not np.all(np.linalg.norm(np.atleast_2d(z), axis=-1) > 0):
        warnings.warn("zero projection produced a degenerate embedding", DegenerateEmbeddingWarning)
    return _normalize_rows(z)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """dot(u, v) / (|u| |v|), clamped to [-1, 1]; 0 for degenerate input."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine of a zero vector is defined as 0", DegenerateEmbeddingWarning)
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def forward_batch(
    video_features: np.ndarray,
    caption_features: np.ndarray,
    params: ModelParams,
) -> np.ndarray:
    """All pairwise cosine similarities between embedded videos (rows) and
    embedded captions (columns), clamped against rounding."""
    video_features = np.atleast_2d(np.asarray(video_features, dtype=float))
    caption_features = np.atleast_2d(np.asarray(caption_features, dtype=float))
    if video_features.shape[0] == 0 or caption_features.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    e_v = embed(video_features, params.w_video)
    e_q = embed(caption_features, params.w_text)
    return np.clip(e_v @ e_q.T, -1.0, 1.0)


def _forward_unclipped(video_features, caption_features, params):
    """Similarities without the [-1, 1] clamp: the smooth map the gradient
    path differentiates (the clamp only moves values by rounding noise)."""
    z_v = np.asarray(video_features, dtype=float) @ params.w_video
    z_q = np.asarray(caption_features, dtype=float) @ params.w_text
    e_v = _normalize_rows(z_v)
    e_q = _normalize_rows(z_q)
    return z_v, z_q, e_v, e_q, e_v @ e_q.T


def loss_gradients(
    video_features: np.ndarray,
    caption_features: np.ndarray,
    params: ModelParams,
    mined_v2t: MinedTriplets,
    mined_t2v: MinedTriplets,
    margins: Margins,
    t2v_weight: float = 1.0,
) -> tuple[LossBreakdown, GradientSet]:
    """Bidirectional batch loss and its gradients w.r.t. both towers.

    Mined indices are treated as constants (the selection is not
    differentiated through), so away from hinge kinks the result matches
    central finite differences of the returned total.
    """
    video_features = np.atleast_2d(np.asarray(video_features, dtype=float))
    caption_features = np.atleast_2d(np.asarray(caption_features, dtype=float))
    z_v, z_q, e_v, e_q, sims = _forward_unclipped(video_features, caption_features, params)
    n_videos, n_captions = sims.shape
    if n_videos != n_captions:
        raise ValueError(
            f"expected a batch of (video, caption) pairs, got {n_videos} videos and {n_captions} captions"
        )
    gt_v2t = np.arange(n_videos)
    gt_t2v = gt_v2t

    fwd = batch_loss(sims, mined_v2t, gt_v2t, margins)
    bwd = batch_loss(sims.T, mined_t2v, gt_t2v, margins)
    w = float(t2v_weight)
    breakdown = LossBreakdown(
        total=fwd.total + w * bwd.total,
        l_n_sum=fwd.l_n_sum + w * bwd.l_n_sum,
        l_p_sum=fwd.l_p_sum + w * bwd.l_p_sum,
        active_negatives=fwd.active_negatives + bwd.active_negatives,
        active_positives=fwd.active_positives + bwd.active_positives,
        skipped=fwd.skipped + bwd.skipped,
    )

    # d(total)/d(sims): +1 at the mined negative, -1 at the reference
    # positive, per active hinge, scaled by the direction's normalization
    g_sims = np.zeros_like(sims)
    scale_fwd = 1.0 / n_videos
    for t in anchor_terms(sims, mined_v2t, gt_v2t, margins):
        if t.l_n > 0:
            g_sims[t.anchor, t.negative] += scale_fwd
            g_sims[t.anchor, t.gt] -= scale_fwd
        if t.l_p is not None and t.l_p > 0:
            g_sims[t.anchor, t.negative] += scale_fwd
            g_sims[t.anchor, t.positive] -= scale_fwd
    scale_bwd = w / n_captions
    for t in anchor_terms(sims.T, mined_t2v, gt_t2v, margins):
        if t.l_n > 0:
            g_sims[t.negative, t.anchor] += scale_bwd
            g_sims[t.gt, t.anchor] -= scale_bwd
        if t.l_p is not None and t.l_p > 0:
            g_sims[t.negative, t.anchor] += scale_bwd
            g_sims[t.positive, t.anchor] -= scale_bwd

    grad_e_v = g_sims @ e_q
    grad_e_q = g_sims.T @ e_v
    grad_w_video = video_features.T @ _norm_backward(z_v, e_v, grad_e_v)
    grad_w_text = caption_features.T @ _norm_backward(z_q, e_q, grad_e_q)
    return breakdown, GradientSet(grad_w_video=grad_w_video, grad_w_text=grad_w_text)


def _norm_backward(z: np.ndarray, e: np.ndarray, grad_e: np.ndarray) -> np.ndarray:
    """Backprop through row-wise L2 normalization; zero rows get zero grad."""
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    inner = np.sum(grad_e * e, axis=-1, keepdims=True)
    grad_z = (grad_e - inner * e) / safe
    return np.where(norms > 0, grad_z, 0.0)


def sgd_step(params: ModelParams, grads: GradientSet, lr: float) -> ModelParams:
    """params - lr * grads, elementwise."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (np.all(np.isfinite(grads.grad_w_video)) and np.all(np.isfinite(grads.grad_w_text))):
        raise TrainingDivergedError("non-finite gradient")
    return ModelParams(
        w_video=params.w_video - lr * grads.grad_w_video,
        w_text=params.w_text - lr * grads.grad_w_text,
    )


@dataclass(frozen=True)
class TrainConfig:
    strategy: Strategy = Strategy.RANP
    tau: float = 0.15
    delta_n: float = 0.2
    delta_p: float = 0.2
    rho: float = 0.25
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.1
    seed: int = 0
    embed_dim: int = 32
    t2v_weight: float = 1.0
    empty_empty: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    @property
    def margins(self) -> Margins:
        return Margins(self.delta_n, self.delta_p)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "tau": self.tau,
            "delta_n": self.delta_n,
            "delta_p": self.delta_p,
            "rho": self.rho,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "embed_dim": self.embed_dim,
            "t2v_weight": self.t2v_weight,
            "empty_empty": self.empty_empty,
        }


@dataclass(frozen=True)
class StepLog:
    epoch: int
    step: int
    total: float
    l_n_sum: float
    l_p_sum: float
    skipped: int


@dataclass(frozen=True)
class ValLog:
    epoch: int
    ndcg_avg: float
    ndcg_t2v: float
    ndcg_v2t: float


@dataclass
class TrainResult:
    params: ModelParams
    final_params: ModelParams
    step_logs: list[StepLog]
    val_logs: list[ValLog]
    best_epoch: int
    best_val_ndcg: float | None


def train(dataset, config: TrainConfig) -> TrainResult:
    """Run the full mining/loss/step loop and keep the epoch checkpoint
    with the best validation nDCG (initial parameters when epochs=0 or no
    validation split is available)."""
    from .data import sample_batches
    from .metrics import evaluate  # local import: metrics imports this module

    init_rng = np.random.default_rng([config.seed, _INIT_STREAM])
    params = init_params(dataset.d_video, dataset.d_text, config.embed_dim, init_rng)

    rel_full, video_pos, caption_pos = split_relevance(dataset, config)
    has_val = bool(dataset.splits.get("val"))

    best_params = params.copy()
    best_epoch = -1
    best_val = None
    step_logs: list[StepLog] = []
    val_logs: list[ValLog] = []

    for epoch in range(config.epochs):
        batches = sample_batches(
            dataset, "train", config.batch_size, seed=[config.seed, _EPOCH_STREAM, epoch]
        )
        for step, batch in enumerate(batches):
            v_feats = dataset.video_feature_matrix(batch.video_ids)
            q_feats = dataset.caption_feature_matrix(batch.caption_ids)
            v_idx = [video_pos[v] for v in batch.video_ids]
            q_idx = [caption_pos[c] for c in batch.caption_ids]
            rel = rel_full[np.ix_(v_idx, q_idx)]

            _, _, _, _, sims = _forward_unclipped(v_feats, q_feats, params)
            gt = np.arange(sims.shape[0])
            mined_v2t = mine_batch(sims, rel, gt, config.tau, config.strategy)
            mined_t2v = mine_batch(sims.T, rel.T, gt, config.tau, config.strategy)
            breakdown, grads = loss_gradients(
                v_feats, q_feats, params, mined_v2t, mined_t2v,
                config.margins, t2v_weight=config.t2v_weight,
            )
            if not np.isfinite(breakdown.total):
                raise TrainingDivergedError(
                    f"non-finite loss {breakdown.total} at epoch {epoch} step {step}"
                )
            params = sgd_step(params, grads, config.lr)
            step_logs.append(StepLog(
                epoch=epoch, step=step, total=breakdown.total,
                l_n_sum=breakdown.l_n_sum, l_p_sum=breakdown.l_p_sum,
                skipped=breakdown.skipped,
            ))

        if has_val:
            report = evaluate(params, dataset, "val", rho=config.rho, empty_empty=config.empty_empty)
            val_logs.append(ValLog(
                epoch=epoch, ndcg_avg=report.ndcg_avg,
                ndcg_t2v=report.ndcg_t2v, ndcg_v2t=report.ndcg_v2t,
            ))
            if best_val is None or report.ndcg_avg > best_val:
                best_val = report.ndcg_avg
                best_epoch = epoch
                best_params = params.copy()

    if not has_val or config.epochs == 0:
        best_params = params.copy() if config.epochs > 0 else best_params
        best_epoch = config.epochs - 1
    return TrainResult(
        params=best_params,
        final_params=params,
        step_logs=step_logs,
        val_logs=val_logs,
        best_epoch=best_epoch,
        best_val_ndcg=best_val,
    )


def split_relevance(dataset, config: TrainConfig, split: str = "train"):
    """Precompute the relevance matrix between a split's video profiles and
    its caption profiles, plus id -> row/column lookups for batch slicing."""
    video_ids = list(dataset.splits[split])
    caption_ids = [c for v in video_ids for c in dataset.video_by_id[v].caption_ids]
    video_profiles = [dataset.video_profile(v, config.rho) for v in video_ids]
    caption_profiles = [dataset.caption_by_id[c].annotation.profile for c in caption_ids]
    rel = relevance_matrix(video_profiles, caption_profiles, empty_empty=config.empty_empty)
    video_pos = {v: i for i, v in enumerate(video_ids)}
    caption_pos = {c: j for j, c in enumerate(caption_ids)}
    return rel, video_pos, caption_pos


CHECKPOINT_FORMAT = "relmine-checkpoint"
CHECKPOINT_VERSION = 1


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    config: TrainConfig,
    epoch: int,
    val_ndcg: float | None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d_video": params.w_video.shape[0],
        "d_text": params.w_text.shape[0],
        "embed_dim": params.embed_dim,
        "w_video": params.w_video.tolist(),
        "w_text": params.w_text.tolist(),
        "config": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "epoch": epoch,
        "val_ndcg": val_ndcg,
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IncompatibleCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(f"not a recognized checkpoint: {path}")
    params = ModelParams(
        w_video=np.asarray(payload["w_video"], dtype=float),
        w_text=np.asarray(payload["w_text"], dtype=float),
    )
    expected = (payload["d_video"], payload["embed_dim"])
    if params.w_video.shape != expected or params.w_text.shape != (payload["d_text"], payload["embed_dim"]):
        raise IncompatibleCheckpointError("checkpoint weight shapes disagree with its header")
    if config_hash(payload["config"]) != payload["config_hash"]:
        raise IncompatibleCheckpointError("checkpoint config hash does not match its config")
    return params, payload
