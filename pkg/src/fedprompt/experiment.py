"""Experiment configs, sweep expansion, and per-cell execution.

A config is a JSON document validated strictly (unknown keys are rejected
with their path). A sweep expands to the cartesian product of its axes; each
cell gets an isolated RNG stream derived from the top-level seed and the
cell's override *descriptor* (not its ordinal position), so adding a sweep
value never changes any other cell's results. The backbone source keeps its
own seed and is shared across cells, keeping trainer comparisons on
identical data.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

from fedprompt import backbone as B
from fedprompt import costmodel, federation
from fedprompt.errors import ConfigError
from fedprompt.partitioning import partition
from fedprompt.utils import TAG_CELL, rng_for

_BACKBONE_SYNTH_KEYS = {
    "k", "d", "depth", "seed", "samples_per_class", "noise", "d_img", "n_heads",
    "c", "max_seq", "test_per_class", "alignment", "prompt_len_hint", "logit_scale",
}
_PARTITION_KEYS = {"regime", "shots", "overlap", "classes_per_client"}
_FEDERATION_KEYS = {
    "n_clients", "rounds", "clients_per_round", "local_epochs", "batch_size",
    "lr", "mode", "trainer", "prompt_len", "tau", "weighting", "dropout_prob",
    "seqlen_for_flops",
}
_SWEEP_KEYS = {"shots", "clients", "overlap", "trainers"}
_TOP_KEYS = {"seed", "eval_interval", "backbone", "partition", "federation",
             "sweep", "save_prompt", "out_dir", "cost"}
_COST_KEYS = {"backbone_params", "full_model_params", "prompt_params", "rounds",
              "clients_per_round", "n_clients", "epochs", "batch", "seqlen",
              "down_mbps", "up_mbps"}


def _reject_unknown(section: dict, allowed: set, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}{key}: unknown key")


@dataclass
class ExperimentConfig:
    seed: int
    eval_interval: int
    backbone: dict
    partition: dict
    federation: dict
    sweep: dict
    cost: dict | None
    save_prompt: bool
    out_dir: str | None
    raw: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        _reject_unknown(doc, _TOP_KEYS, "")
        backbone = doc.get("backbone")
        if not isinstance(backbone, dict) or not ({"synthetic", "path"} & backbone.keys()):
            raise ConfigError("backbone: need a 'synthetic' section or a 'path'")
        _reject_unknown(backbone, {"synthetic", "path"}, "backbone.")
        if "synthetic" in backbone:
            _reject_unknown(backbone["synthetic"], _BACKBONE_SYNTH_KEYS, "backbone.synthetic.")
        part = doc.get("partition", {})
        _reject_unknown(part, _PARTITION_KEYS, "partition.")
        fed = doc.get("federation", {})
        _reject_unknown(fed, _FEDERATION_KEYS, "federation.")
        sweep = doc.get("sweep", {})
        _reject_unknown(sweep, _SWEEP_KEYS, "sweep.")
        for axis, vals in sweep.items():
            if not isinstance(vals, list):
                raise ConfigError(f"sweep.{axis}: must be a list")
        cost = doc.get("cost")
        if cost is not None:
            _reject_unknown(cost, _COST_KEYS, "cost.")
        return cls(
            seed=int(doc.get("seed", 0)),
            eval_interval=int(doc.get("eval_interval", 1)),
            backbone=backbone,
            partition=dict(part),
            federation=dict(fed),
            sweep=dict(sweep),
            cost=cost,
            save_prompt=bool(doc.get("save_prompt", False)),
            out_dir=doc.get("out_dir"),
            raw=doc,
        )


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(doc)


def build_backbone(cfg: ExperimentConfig) -> B.Backbone:
    src = cfg.backbone
    if "path" in src:
        return B.load_backbone(src["path"])
    params = dict(src["synthetic"])
    params.setdefault("seed", cfg.seed)
    try:
        return B.generate_synthetic_backbone(
            k=params.pop("k"), d=params.pop("d"), depth=params.pop("depth"),
            seed=params.pop("seed"), samples_per_class=params.pop("samples_per_class"),
            noise=params.pop("noise"), **params,
        )
    except KeyError as exc:
        raise ConfigError(f"backbone.synthetic: missing {exc.args[0]}") from None


@dataclass
class Cell:
    name: str
    overrides: dict
    seed: int


def expand_cells(cfg: ExperimentConfig) -> list[Cell]:
    axes = []
    for axis in ("shots", "clients", "overlap", "trainers"):
        vals = cfg.sweep.get(axis)
        axes.append([(axis, v) for v in vals] if vals else [(axis, None)])
    cells = []
    for idx, combo in enumerate(itertools.product(*axes)):
        overrides = {axis: v for axis, v in combo if v is not None}
        parts = [f"cell_{idx:03d}"]
        for axis, v in combo:
            if v is not None:
                parts.append(f"{axis}-{v}")
        descriptor = json.dumps(overrides, sort_keys=True)
        digest = int.from_bytes(hashlib.sha256(descriptor.encode()).digest()[:4], "little")
        cell_seed = int(rng_for(cfg.seed, TAG_CELL, digest).integers(2**31))
        cells.append(Cell(name="_".join(parts), overrides=overrides, seed=cell_seed))
    return cells


def _apply_overrides(cfg: ExperimentConfig, cell: Cell) -> tuple[dict, dict]:
    part = dict(cfg.partition)
    fed = dict(cfg.federation)
    if "shots" in cell.overrides:
        part["shots"] = cell.overrides["shots"]
    if "overlap" in cell.overrides:
        part["regime"] = "overlap"
        part["overlap"] = cell.overrides["overlap"]
    if "clients" in cell.overrides:
        fed["n_clients"] = cell.overrides["clients"]
    if "trainers" in cell.overrides:
        fed["trainer"] = cell.overrides["trainers"]
    return part, fed


def run_cell(cfg: ExperimentConfig, cell: Cell, out_dir: Path) -> list[str]:
    """Execute one sweep cell and write its artifacts; returns file names."""
    bb = build_backbone(cfg)
    part_params, fed_params = _apply_overrides(cfg, cell)

    fed_cfg = federation.FederationConfig(
        seed=cell.seed, eval_interval=cfg.eval_interval, **fed_params
    )
    train_labels = bb.image.labels[bb.train_slice()]
    spec = partition(
        labels=train_labels,
        k=bb.num_classes,
        regime=part_params.get("regime", "iid"),
        n_clients=fed_cfg.n_clients,
        shots=part_params.get("shots"),
        seed=cell.seed,
        overlap=part_params.get("overlap"),
        classes_per_client=part_params.get("classes_per_client"),
    )
    ckpt_dir = out_dir / f"{cell.name}.checkpoints" if cfg.save_prompt else None
    result = federation.run(fed_cfg, bb, spec, checkpoint_dir=ckpt_dir)

    files = {}
    files[f"{cell.name}.csv"] = result.metrics_csv()
    files[f"{cell.name}.events.jsonl"] = result.events_jsonl()
    files[f"{cell.name}.cost.json"] = json.dumps(result.cost.to_dict(), indent=2, sort_keys=True) + "\n"
    files[f"{cell.name}.partition.json"] = spec.to_json() + "\n"
    for name, text in files.items():
        (out_dir / name).write_text(text)
    written = sorted(files)
    if ckpt_dir is not None and ckpt_dir.exists():
        written.extend(sorted(f"{cell.name}.checkpoints/{p.name}" for p in ckpt_dir.iterdir()))
    return written


def cost_reports(cfg: ExperimentConfig) -> dict[str, costmodel.CostReport]:
    """Closed-form feasibility reports for the configured preset.

    With a ``cost`` section, parameter counts come straight from it; without
    one, they are derived from the configured backbone and federation."""
    if cfg.cost is not None:
        c = cfg.cost
        common = dict(
            rounds=int(c.get("rounds", 100)),
            clients_per_round=int(c.get("clients_per_round", 1)),
            n_clients=int(c.get("n_clients", 1)),
            epochs=int(c.get("epochs", 1)),
            batch=int(c.get("batch", 32)),
            seqlen=int(c.get("seqlen", 196)),
            down_bps=float(c.get("down_mbps", 54)) * 1e6,
            up_bps=float(c.get("up_mbps", 12)) * 1e6,
        )
        reports = {
            "promptfl": costmodel.federation_cost(
                "promptfl",
                backbone_params=int(c["backbone_params"]),
                trainable_params=int(c["prompt_params"]),
                **common,
            ),
            "finetune": costmodel.federation_cost(
                "finetune",
                backbone_params=int(c.get("full_model_params", c["backbone_params"])),
                trainable_params=int(c.get("full_model_params", c["backbone_params"])),
                **common,
            ),
        }
    else:
        bb = build_backbone(cfg)
        fed = federation.FederationConfig(
            seed=cfg.seed, eval_interval=cfg.eval_interval, **cfg.federation
        )
        seqlen = (fed.seqlen_for_flops
                  or fed.prompt_len + bb.classes.tokens_per_class)
        common = dict(
            rounds=fed.rounds,
            clients_per_round=fed.clients_per_round,
            n_clients=fed.n_clients,
            epochs=fed.local_epochs,
            batch=fed.batch_size,
            seqlen=seqlen,
        )
        from fedprompt.trainers import make_trainer

        full = make_trainer("finetune", bb, fed.prompt_len, fed.tau)
        reports = {
            "promptfl": costmodel.federation_cost(
                "promptfl", backbone_params=bb.parameter_count(),
                trainable_params=fed.prompt_len * bb.text.width, **common,
            ),
            "finetune": costmodel.federation_cost(
                "finetune", backbone_params=full.trainable_params,
                trainable_params=full.trainable_params, **common,
            ),
        }
    return reports
