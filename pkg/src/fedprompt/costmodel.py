"""Closed-form communication, compute, and storage accounting.

Conventions (documented, decimal units): 1 MB = 1e6 bytes, 1 Mbps = 1e6
bit/s, 4 bytes per parameter at full precision. Reference link rates are a
mobile profile: 54 Mbps down, 12 Mbps up.

Training compute is reported as two lines because "training cost" of a
frozen-backbone system is genuinely ambiguous: ``train_flops`` counts only
the trainable parameters (2 x 3 x params x epochs x batch x seqlen), while
``frozen_pass_flops`` prices the forward+backward traffic through the
frozen backbone at the same formula. Consumers can quote either.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fedprompt.errors import ConfigError

DOWN_BPS = 54e6
UP_BPS = 12e6
BYTES_PER_PARAM = 4


def training_flops(params: float, epochs: float, batch: float, seqlen: float) -> float:
    """2 x 3 x params x epochs x batch x seqlen."""
    if min(params, epochs, batch, seqlen) <= 0:
        raise ConfigError("training_flops factors must be positive")
    return 2.0 * 3.0 * params * epochs * batch * seqlen


def inference_flops(params: float, seqlen: float) -> float:
    """2 x params x seqlen (attention KV caching assumed)."""
    if min(params, seqlen) <= 0:
        raise ConfigError("inference_flops factors must be positive")
    return 2.0 * params * seqlen


def transfer_seconds(nbytes: float, rate_bps: float) -> float:
    """Seconds to move nbytes over a link of rate_bps (decimal bits/s)."""
    if rate_bps <= 0:
        raise ConfigError("link rate must be positive")
    if nbytes < 0:
        raise ConfigError("byte count must be non-negative")
    return nbytes * 8.0 / rate_bps


@dataclass
class CostReport:
    """Fleet-level accounting for one federated configuration.

    Per-round figures sum payloads over the clients active that round;
    totals cover all rounds plus any one-time distribution."""

    trainer: str
    rounds: int
    clients_per_round: int
    down_bps: float = DOWN_BPS
    up_bps: float = UP_BPS

    one_time_download_bytes: int = 0
    download_bytes_round: int = 0
    upload_bytes_round: int = 0
    download_bytes_total: int = 0
    upload_bytes_total: int = 0

    transfer_seconds_round: float = 0.0
    transfer_seconds_total: float = 0.0

    train_flops_round: float = 0.0
    train_flops_total: float = 0.0
    frozen_pass_flops_round: float = 0.0
    frozen_pass_flops_total: float = 0.0

    inference_flops_per_query: float = 0.0
    storage_bytes: int = 0

    extras: dict = field(default_factory=dict)

    @property
    def cumulative_bytes(self) -> int:
        return self.one_time_download_bytes + self.download_bytes_total + self.upload_bytes_total

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "trainer", "rounds", "clients_per_round", "down_bps", "up_bps",
            "one_time_download_bytes", "download_bytes_round", "upload_bytes_round",
            "download_bytes_total", "upload_bytes_total",
            "transfer_seconds_round", "transfer_seconds_total",
            "train_flops_round", "train_flops_total",
            "frozen_pass_flops_round", "frozen_pass_flops_total",
            "inference_flops_per_query", "storage_bytes",
        )}
        out["cumulative_bytes"] = self.cumulative_bytes
        out.update(self.extras)
        return out


def federation_cost(
    trainer: str,
    rounds: int,
    clients_per_round: int,
    n_clients: int,
    backbone_params: int,
    trainable_params: int,
    epochs: int = 1,
    batch: int = 32,
    seqlen: int = 196,
    down_bps: float = DOWN_BPS,
    up_bps: float = UP_BPS,
) -> CostReport:
    """Closed-form prediction of a run's cost.

    Prompt training ships the frozen backbone once to every client and then
    moves only the trainable block each round; full-model training moves the
    whole parameter set both ways every round."""
    if rounds < 0 or clients_per_round < 1 or n_clients < clients_per_round:
        raise ConfigError("inconsistent round/client counts")
    m = clients_per_round
    trainable_bytes = trainable_params * BYTES_PER_PARAM
    backbone_bytes = backbone_params * BYTES_PER_PARAM

    if trainer == "promptfl":
        one_time = n_clients * backbone_bytes
        down_round = m * trainable_bytes
        up_round = m * trainable_bytes
        frozen_round = m * training_flops(backbone_params, epochs, batch, seqlen) if backbone_params else 0.0
        storage = (backbone_params + trainable_params) * BYTES_PER_PARAM
        total_model_params = backbone_params + trainable_params
    elif trainer in ("finetune", "scratch"):
        one_time = 0
        down_round = m * trainable_bytes
        up_round = m * trainable_bytes
        frozen_round = 0.0
        storage = trainable_bytes
        total_model_params = trainable_params
    else:
        raise ConfigError(f"unknown trainer {trainer!r}")

    train_round = m * training_flops(trainable_params, epochs, batch, seqlen)
    sec_round = transfer_seconds(down_round, down_bps) + transfer_seconds(up_round, up_bps)
    sec_total = (
        transfer_seconds(one_time + rounds * down_round, down_bps)
        + transfer_seconds(rounds * up_round, up_bps)
    )
    return CostReport(
        trainer=trainer,
        rounds=rounds,
        clients_per_round=m,
        down_bps=down_bps,
        up_bps=up_bps,
        one_time_download_bytes=one_time,
        download_bytes_round=down_round,
        upload_bytes_round=up_round,
        download_bytes_total=rounds * down_round,
        upload_bytes_total=rounds * up_round,
        transfer_seconds_round=sec_round,
        transfer_seconds_total=sec_total,
        train_flops_round=train_round,
        train_flops_total=rounds * train_round,
        frozen_pass_flops_round=frozen_round,
        frozen_pass_flops_total=rounds * frozen_round,
        inference_flops_per_query=inference_flops(total_model_params, seqlen),
        storage_bytes=storage,
    )


def summary_text(report: CostReport) -> str:
    """Human-readable feasibility summary, decimal units."""
    r = report
    lines = [
        f"trainer: {r.trainer}   rounds: {r.rounds}   clients/round: {r.clients_per_round}",
        f"link: {r.down_bps / 1e6:.0f} Mbps down / {r.up_bps / 1e6:.0f} Mbps up",
        f"one-time download: {r.one_time_download_bytes / 1e6:.1f} MB"
        f" ({transfer_seconds(r.one_time_download_bytes, r.down_bps) / 60:.2f} min)",
        f"per-round traffic: {r.download_bytes_round / 1e6:.3f} MB down"
        f" + {r.upload_bytes_round / 1e6:.3f} MB up",
        f"total traffic: {(r.one_time_download_bytes + r.download_bytes_total) / 1e9:.3f} GB down"
        f" + {r.upload_bytes_total / 1e9:.3f} GB up"
        f" ({r.transfer_seconds_total / 3600:.2f} h)",
        f"training flops/round (trainable only): {r.train_flops_round:.4g}",
        f"training flops/round (frozen backbone pass): {r.frozen_pass_flops_round:.4g}",
        f"inference flops/query: {r.inference_flops_per_query:.4g}",
        f"storage: {r.storage_bytes / 1e6:.1f} MB",
    ]
    return "\n".join(lines)
