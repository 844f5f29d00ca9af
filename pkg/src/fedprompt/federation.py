"""Round-synchronous server/client protocol over simulated clients.

Each round: select m of n clients uniformly without replacement, broadcast
the global vector, let every selected client compute its contribution on its
own shard, then fold the updates back in ascending client-id order so the
result is bit-deterministic no matter how local training was scheduled.

Two update semantics are supported: ``fedsgd`` clients send the gradient of
one batch and the server steps; ``fedavg`` clients run local SGD epochs and
send the parameter delta, which the server averages in. Updates carry only
the payload vector, a sample count, and a byte count; features, labels, and
losses never ride the wire (losses are collected out-of-band by the
simulator for reporting).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from fedprompt import costmodel, metrics
from fedprompt.backbone import Backbone
from fedprompt.errors import ConfigError, ShapeError
from fedprompt.partitioning import PartitionSpec
from fedprompt.tensor import F32
from fedprompt.trainers import TRAINERS, Trainer, make_trainer
from fedprompt.utils import TAG_BATCH, TAG_DROPOUT, TAG_SELECT, rng_for

MODES = ("fedsgd", "fedavg")

CSV_COLUMNS = (
    "round", "train_loss", "test_accuracy", "test_macro_f1", "test_weighted_f1",
    "bytes_up_round", "bytes_down_round", "cumulative_bytes", "flops_round",
)


@dataclass
class FederationConfig:
    n_clients: int
    rounds: int
    clients_per_round: int | None = None      # default: all clients
    local_epochs: int = 1
    batch_size: int = 32
    lr: float = 0.001
    mode: str = "fedavg"
    trainer: str = "promptfl"
    prompt_len: int = 8
    tau: float | None = None
    weighting: str = "samples"                # or "uniform"
    seed: int = 0
    eval_interval: int = 1
    dropout_prob: float = 0.0
    seqlen_for_flops: int | None = None       # default: actual text sequence

    def __post_init__(self):
        if self.clients_per_round is None:
            self.clients_per_round = self.n_clients
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ConfigError(
                f"clients_per_round must be in [1, {self.n_clients}], got {self.clients_per_round}"
            )
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.trainer not in TRAINERS:
            raise ConfigError(f"trainer must be one of {TRAINERS}")
        if self.weighting not in ("samples", "uniform"):
            raise ConfigError("weighting must be 'samples' or 'uniform'")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError("dropout_prob must be in [0, 1)")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")


@dataclass
class ClientUpdate:
    """The entire wire contract: payload, sample count, byte count."""

    client_id: int
    payload: np.ndarray
    sample_count: int
    payload_bytes: int


@dataclass
class ServerState:
    round: int
    theta: np.ndarray


@dataclass
class RunResult:
    rows: list[dict]
    theta: np.ndarray
    cost: costmodel.CostReport
    events: list[dict]
    final_eval: dict

    def metrics_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def select_clients(n: int, m: int, seed: int, round_idx: int) -> list[int]:
    """Uniform sample of m distinct clients, ascending, deterministic in
    (seed, round)."""
    if m > n:
        raise ConfigError(f"cannot select {m} of {n} clients")
    rng = rng_for(seed, TAG_SELECT, round_idx)
    return sorted(int(c) for c in rng.choice(n, size=m, replace=False))


def _batch_indices(size: int, batch: int, rng) -> np.ndarray:
    if batch >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=batch, replace=False))


def local_train(
    trainer: Trainer,
    theta_g: np.ndarray,
    shard_x: np.ndarray,
    shard_y: np.ndarray,
    cfg: FederationConfig,
    round_idx: int,
    client_id: int,
) -> tuple[ClientUpdate, float]:
    """One client's round contribution plus its mean local loss (off-wire)."""
    size = shard_x.shape[0]
    if size == 0:
        raise ShapeError("local_train requires a non-empty shard")

    if cfg.mode == "fedsgd":
        rng = rng_for(cfg.seed, TAG_BATCH, round_idx, client_id)
        idx = _batch_indices(size, cfg.batch_size, rng)
        loss, grad = trainer.loss_and_grad(theta_g, shard_x[idx], shard_y[idx])
        payload = grad
        mean_loss = loss
    else:
        theta = theta_g.copy()
        losses = []
        lr = F32(cfg.lr)
        for epoch in range(cfg.local_epochs):
            rng = rng_for(cfg.seed, TAG_BATCH, round_idx, client_id, epoch)
            order = rng.permutation(size)
            for start in range(0, size, cfg.batch_size):
                chunk = np.sort(order[start : start + cfg.batch_size])
                loss, grad = trainer.loss_and_grad(theta, shard_x[chunk], shard_y[chunk])
                theta = theta - lr * grad
                losses.append(loss)
        payload = theta - theta_g
        mean_loss = float(np.mean(losses))

    payload = np.ascontiguousarray(payload, dtype=F32)
    return (
        ClientUpdate(
            client_id=client_id,
            payload=payload,
            sample_count=size,
            payload_bytes=4 * payload.size,
        ),
        mean_loss,
    )


def aggregate(
    updates: list[ClientUpdate],
    theta_g: np.ndarray,
    mode: str,
    lr: float,
    weighting: str = "samples",
) -> np.ndarray:
    """Weighted mean of payloads folded into theta, ascending client order."""
    if not updates:
        raise ConfigError("aggregate needs at least one update")
    for u in updates:
        if u.payload.shape != theta_g.shape:
            raise ShapeError("update payload shape differs from global parameters")
        if u.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")
    ordered = sorted(updates, key=lambda u: u.client_id)
    if weighting == "samples":
        total = float(sum(u.sample_count for u in ordered))
        weights = [u.sample_count / total for u in ordered]
    else:
        weights = [1.0 / len(ordered)] * len(ordered)
    mean = np.zeros_like(theta_g)
    for u, w in zip(ordered, weights):
        mean += F32(w) * u.payload
    if mode == "fedsgd":
        return theta_g - F32(lr) * mean
    return theta_g + mean


def evaluate(trainer: Trainer, theta: np.ndarray, x: np.ndarray, y: np.ndarray, k: int) -> dict:
    preds = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], 512):
        probs = trainer.probabilities(theta, x[start : start + 512])
        preds[start : start + 512] = probs.argmax(axis=1)
    cm = metrics.confusion_matrix(preds, y, k)
    return {
        "accuracy": metrics.accuracy(preds, y),
        "macro_f1": metrics.macro_f1(cm),
        "weighted_f1": metrics.weighted_f1(cm),
    }


def run(
    cfg: FederationConfig,
    backbone: Backbone,
    part: PartitionSpec,
    checkpoint_dir=None,
) -> RunResult:
    """Execute the full round loop; fully deterministic in cfg.seed.

    With ``checkpoint_dir`` set and the prompt trainer active, the server
    writes the global prompt block to ``round_<t>.fplp`` on eval rounds."""
    if part.n_clients != cfg.n_clients:
        raise ConfigError(
            f"partition has {part.n_clients} clients, config says {cfg.n_clients}"
        )
    trainer = make_trainer(cfg.trainer, backbone, cfg.prompt_len, cfg.tau)
    theta = trainer.init_theta(cfg.seed)
    k = backbone.num_classes

    tr = backbone.train_slice()
    train_x = backbone.image.features[tr]
    train_y = backbone.image.labels[tr]
    te = backbone.test_slice()
    test_x = backbone.image.features[te]
    test_y = backbone.image.labels[te]
    if test_x.shape[0] == 0:
        raise ConfigError("backbone has no held-out test rows")
    for a in part.assignment:
        if a.size and a.max() >= train_x.shape[0]:
            raise ConfigError("partition indexes beyond the train split")

    shards = [(train_x[idx], train_y[idx]) for idx in part.assignment]

    if cfg.seqlen_for_flops is not None:
        seqlen = cfg.seqlen_for_flops
    elif cfg.trainer == "promptfl":
        seqlen = cfg.prompt_len + backbone.classes.tokens_per_class
    else:
        seqlen = backbone.classes.tokens_per_class
    flops_round_per_client = costmodel.training_flops(
        trainer.trainable_params, cfg.local_epochs, cfg.batch_size, seqlen
    )
    theta_bytes = 4 * theta.size
    one_time = cfg.n_clients * 4 * backbone.parameter_count() if cfg.trainer == "promptfl" else 0

    rows: list[dict] = []
    events: list[dict] = []
    up_total = 0
    down_total = 0
    flops_total = 0.0
    final_eval: dict = {}

    for t in range(1, cfg.rounds + 1):
        selected = select_clients(cfg.n_clients, cfg.clients_per_round, cfg.seed, t)
        events.append({"round": t, "event": "selected", "clients": selected})

        if cfg.dropout_prob > 0.0:
            drop_rng = rng_for(cfg.seed, TAG_DROPOUT, t)
            alive = [c for c in selected if drop_rng.random() >= cfg.dropout_prob]
            dropped = sorted(set(selected) - set(alive))
            if dropped:
                events.append({"round": t, "event": "dropped", "clients": dropped})
            selected = alive

        updates: list[ClientUpdate] = []
        losses: list[tuple[float, int]] = []
        bytes_down = 0
        for cid in selected:
            sx, sy = shards[cid]
            if sx.shape[0] == 0:
                events.append({"round": t, "event": "skipped_empty_shard", "client": cid})
                continue
            bytes_down += theta_bytes
            update, mean_loss = local_train(trainer, theta, sx, sy, cfg, t, cid)
            updates.append(update)
            losses.append((mean_loss, update.sample_count))

        if not updates:
            events.append({"round": t, "event": "round_failed_no_updates"})
            continue

        theta = aggregate(updates, theta, cfg.mode, cfg.lr, cfg.weighting)
        bytes_up = sum(u.payload_bytes for u in updates)
        up_total += bytes_up
        down_total += bytes_down
        flops_round = flops_round_per_client * len(updates)
        flops_total += flops_round

        if t % cfg.eval_interval == 0 or t == cfg.rounds:
            if checkpoint_dir is not None and cfg.trainer == "promptfl":
                from fedprompt.prompt import PromptVectors, save_prompt
                from pathlib import Path

                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_prompt(
                    Path(checkpoint_dir) / f"round_{t:05d}.fplp",
                    PromptVectors(theta.reshape(cfg.prompt_len, backbone.text.width)),
                )
            ev = evaluate(trainer, theta, test_x, test_y, k)
            final_eval = ev
            wsum = sum(n for _, n in losses)
            rows.append({
                "round": t,
                "train_loss": sum(l * n for l, n in losses) / wsum,
                "test_accuracy": ev["accuracy"],
                "test_macro_f1": ev["macro_f1"],
                "test_weighted_f1": ev["weighted_f1"],
                "bytes_up_round": bytes_up,
                "bytes_down_round": bytes_down,
                "cumulative_bytes": one_time + down_total + up_total,
                "flops_round": flops_round,
            })

    cost = costmodel.CostReport(
        trainer=cfg.trainer,
        rounds=cfg.rounds,
        clients_per_round=cfg.clients_per_round,
        one_time_download_bytes=one_time,
        download_bytes_round=rows[-1]["bytes_down_round"] if rows else 0,
        upload_bytes_round=rows[-1]["bytes_up_round"] if rows else 0,
        download_bytes_total=down_total,
        upload_bytes_total=up_total,
        train_flops_round=rows[-1]["flops_round"] if rows else 0.0,
        train_flops_total=flops_total,
        frozen_pass_flops_round=(
            costmodel.training_flops(
                backbone.parameter_count(), cfg.local_epochs, cfg.batch_size, seqlen
            ) * cfg.clients_per_round if cfg.trainer == "promptfl" else 0.0
        ),
        inference_flops_per_query=costmodel.inference_flops(
            backbone.parameter_count() + trainer.trainable_params
            if cfg.trainer == "promptfl" else trainer.trainable_params,
            seqlen,
        ),
        storage_bytes=(
            4 * (backbone.parameter_count() + trainer.trainable_params)
            if cfg.trainer == "promptfl" else 4 * trainer.trainable_params
        ),
        extras={"simulated": True},
    )
    cost.transfer_seconds_total = (
        costmodel.transfer_seconds(one_time + down_total, cost.down_bps)
        + costmodel.transfer_seconds(up_total, cost.up_bps)
    )
    return RunResult(rows=rows, theta=theta, cost=cost, events=events, final_eval=final_eval)
