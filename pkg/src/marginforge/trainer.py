"""Training loop: optimizer, expert blending schedule, warm-up, reports.

Epochs are 1-indexed. Warm-up epochs average the loss over all in-batch
negatives; afterwards the hardest negative per anchor is mined. The DSE/SSE
blending weight follows a three-phase schedule: zero before the start epoch,
exponential interpolation between the two anchor values, then exactly 1.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, MarginForgeError, ShapeMismatchError
from .evaluation import DEFAULT_KS, evaluate_bidirectional
from .experts import dse_text_distances, dse_video_distances, pairwise_distances
from .margin import RescaleConfig, rescale_margins
from .model import (
    ModelDims,
    TwoTowerModel,
    forward_batch,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .objective import LossBreakdown, full_loss_grad, similarity_matrix
from .seeding import named_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MINING_CRITERIA = ("combined", "hard_only")


@dataclass
class TrainConfig:
    alpha: float = 0.05
    beta: float = 0.04
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 5e-4
    seed: int = 0
    warmup_epochs: int = 1
    lambda_start_epoch: int = 20
    lambda_start_value: float = 0.1
    lambda_end_epoch: int = 50
    mining_criterion: str = "combined"
    dse_text: bool = True
    dse_video: bool = True
    sse_text: bool = True
    sse_video: bool = True

    def validate(self, n_train: int | None = None) -> None:
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if n_train is not None and self.batch_size > n_train:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds the {n_train} training items"
            )
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if not 0.0 < self.lambda_start_value <= 1.0:
            raise ConfigError(
                f"lambda_start_value must be in (0, 1], got {self.lambda_start_value}"
            )
        if not 1 <= self.lambda_start_epoch <= self.lambda_end_epoch:
            raise ConfigError(
                f"need 1 <= lambda_start_epoch <= lambda_end_epoch, got "
                f"{self.lambda_start_epoch}..{self.lambda_end_epoch}"
            )
        if self.mining_criterion not in MINING_CRITERIA:
            raise ConfigError(
                f"mining_criterion must be one of {MINING_CRITERIA}, got {self.mining_criterion!r}"
            )


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    model: TwoTowerModel
    opt_state: AdamState
    epoch: int
    seed: int
    config_hash: str


def lambda_schedule(epoch: int, cfg: TrainConfig) -> float:
    """DSE weight: 0 before the start epoch, start_value at it, exponential
    growth to exactly 1.0 at the end epoch and beyond."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-indexed, got {epoch}")
    if epoch < cfg.lambda_start_epoch:
        return 0.0
    if epoch >= cfg.lambda_end_epoch:
        return 1.0
    frac = (epoch - cfg.lambda_start_epoch) / (cfg.lambda_end_epoch - cfg.lambda_start_epoch)
    # start_value^(1-frac) is the exponential curve through both anchors
    return cfg.lambda_start_value ** (1.0 - frac)


def new_adam_state(model: TwoTowerModel) -> AdamState:
    state = AdamState()
    for name, arr in model.param_items():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(param_items, grads: dict, state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied to the parameters in place."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for name, param in param_items:
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeMismatchError(f"{name}: grad shape {g.shape} != param {param.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return state


def _batch_margins(cfg: TrainConfig, rescale: RescaleConfig, state, sse_video_vecs, sse_text_vecs):
    """Margin matrices for the enabled experts of one batch (None = disabled)."""
    out = {}
    out["dse_video"] = (
        rescale_margins(dse_video_distances(state.video_reprs), rescale) if cfg.dse_video else None
    )
    out["dse_text"] = (
        rescale_margins(dse_text_distances(state.text_reprs), rescale) if cfg.dse_text else None
    )
    out["sse_video"] = (
        rescale_margins(pairwise_distances(sse_video_vecs, "sse_video"), rescale)
        if cfg.sse_video
        else None
    )
    out["sse_text"] = (
        rescale_margins(pairwise_distances(sse_text_vecs, "sse_text"), rescale)
        if cfg.sse_text
        else None
    )
    return out


def train_epoch(
    model: TwoTowerModel,
    dataset: Dataset,
    cfg: TrainConfig,
    epoch: int,
    opt_state: AdamState,
) -> LossBreakdown:
    """One pass over the training split in seed-shuffled order.

    Updates the model and optimizer state in place and returns the mean loss
    breakdown over the epoch's batches (mined-index fields are left empty in
    the aggregate).
    """
    rows = dataset.rows(dataset.train_ids)
    pooled = dataset.pooled_video()[rows]
    text = dataset.text[rows]
    sse_video_all = dataset.sse_video.lookup(dataset.train_ids)
    sse_text_all = dataset.sse_text.lookup(dataset.train_ids)

    order = named_rng(cfg.seed, "shuffle", epoch).permutation(len(rows))
    mining = "mean" if epoch <= cfg.warmup_epochs else "hardest"
    lam = lambda_schedule(epoch, cfg)
    rescale = RescaleConfig(mu=cfg.alpha, beta=cfg.beta)

    sums = np.zeros(4)
    n_batches = 0
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        if batch.size < 2:
            continue  # a trailing singleton has no negatives
        try:
            state = forward_batch(model, pooled[batch], text[batch])
            margins = _batch_margins(
                cfg, rescale, state, sse_video_all[batch], sse_text_all[batch]
            )
            breakdown, grads = full_loss_grad(
                model,
                state,
                margins["dse_video"],
                margins["dse_text"],
                margins["sse_video"],
                margins["sse_text"],
                cfg.alpha,
                lam,
                mining,
                cfg.mining_criterion,
            )
            adam_step(model.param_items(), grads, opt_state, cfg.learning_rate)
        except MarginForgeError as exc:
            raise type(exc)(f"epoch {epoch} batch {n_batches}: {exc}") from exc
        sums += (breakdown.total, breakdown.hard_term, breakdown.dse_term, breakdown.sse_term)
        n_batches += 1

    if n_batches == 0:
        raise ConfigError(f"epoch {epoch}: no usable batches for batch_size {cfg.batch_size}")
    sums /= n_batches
    empty = np.empty(0, dtype=np.int64)
    return LossBreakdown(sums[0], sums[1], sums[2], sums[3], lam, empty, empty)


def evaluate_split(model: TwoTowerModel, dataset: Dataset, ids, ks=DEFAULT_KS):
    """Encode a split and run bidirectional retrieval over it."""
    rows = dataset.rows(ids)
    state = forward_batch(model, dataset.pooled_video()[rows], dataset.text[rows])
    S = similarity_matrix(state.video_reprs, state.text_reprs)
    return evaluate_bidirectional(S, ks)


def save_trainer_checkpoint(ckpt: Checkpoint, prefix) -> None:
    """Model goes to ``<prefix>.ckpt``; optimizer and metadata to JSON."""
    prefix = Path(prefix)
    save_checkpoint(ckpt.model, prefix.with_suffix(".ckpt"))
    payload = {
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "config_hash": ckpt.config_hash,
        "adam": {
            "t": ckpt.opt_state.t,
            "m": {k: v.tolist() for k, v in ckpt.opt_state.m.items()},
            "v": {k: v.tolist() for k, v in ckpt.opt_state.v.items()},
        },
    }
    prefix.with_suffix(".state.json").write_text(json.dumps(payload), encoding="utf-8")


def load_trainer_checkpoint(prefix) -> Checkpoint:
    prefix = Path(prefix)
    model = load_checkpoint(prefix.with_suffix(".ckpt"))
    payload = json.loads(prefix.with_suffix(".state.json").read_text(encoding="utf-8"))
    state = AdamState(t=payload["adam"]["t"])
    for name, arr in model.param_items():
        state.m[name] = np.array(payload["adam"]["m"][name], dtype=np.float64).reshape(arr.shape)
        state.v[name] = np.array(payload["adam"]["v"][name], dtype=np.float64).reshape(arr.shape)
    return Checkpoint(model, state, payload["epoch"], payload["seed"], payload["config_hash"])


REPORT_FIELDS = (
    "epoch",
    "lambda",
    "loss_total",
    "loss_hard",
    "loss_dse",
    "loss_sse",
    "t2v_R1",
    "t2v_R5",
    "t2v_R10",
    "t2v_MdR",
    "v2t_R1",
    "v2t_R5",
    "v2t_R10",
    "v2t_MdR",
    "rsum",
)


def run_training(
    dataset: Dataset,
    cfg: TrainConfig,
    hidden_dim: int,
    joint_dim: int,
    out_dir,
    initial_model: TwoTowerModel | None = None,
    config_hash: str = "",
) -> tuple[Checkpoint, list[dict]]:
    """Warm-up plus main epochs with per-epoch validation metrics.

    Writes ``report.jsonl`` (one record per epoch, fixed field order), a
    ``checkpoint_latest`` pair refreshed every epoch, and a
    ``checkpoint_final`` pair at the end. Identical (dataset, config, seed)
    runs produce byte-identical outputs.
    """
    cfg.validate(len(dataset.train_ids))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if initial_model is None:
        dims = ModelDims(dataset.frames.shape[2], dataset.text.shape[1], hidden_dim, joint_dim)
        model = init_params(dims, cfg.seed)
    else:
        model = initial_model
    opt_state = new_adam_state(model)

    records: list[dict] = []
    with open(out / "report.jsonl", "w", encoding="utf-8") as report:
        for epoch in range(1, cfg.epochs + 1):
            agg = train_epoch(model, dataset, cfg, epoch, opt_state)
            t2v, v2t, rsum = evaluate_split(model, dataset, dataset.val_ids)
            record = {
                "epoch": epoch,
                "lambda": agg.lambda_used,
                "loss_total": agg.total,
                "loss_hard": agg.hard_term,
                "loss_dse": agg.dse_term,
                "loss_sse": agg.sse_term,
                "t2v_R1": t2v.r_at[1],
                "t2v_R5": t2v.r_at[5],
                "t2v_R10": t2v.r_at[10],
                "t2v_MdR": t2v.mdr,
                "v2t_R1": v2t.r_at[1],
                "v2t_R5": v2t.r_at[5],
                "v2t_R10": v2t.r_at[10],
                "v2t_MdR": v2t.mdr,
                "rsum": rsum,
            }
            records.append(record)
            report.write(json.dumps(record) + "\n")
            ckpt = Checkpoint(model, opt_state, epoch, cfg.seed, config_hash)
            save_trainer_checkpoint(ckpt, out / "checkpoint_latest")

    final = Checkpoint(model, opt_state, cfg.epochs, cfg.seed, config_hash)
    save_trainer_checkpoint(final, out / "checkpoint_final")
    return final, records
