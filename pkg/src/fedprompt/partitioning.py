"""Sample-to-client assignment under the supported distribution regimes.

Regimes:

* ``iid`` — every class is split across all clients.
* ``extreme_noniid`` — classes are dealt round-robin, so client class sets
  are pairwise disjoint.
* ``overlap`` — a fraction rho of classes is shared between exactly two
  clients (50/50 by sample count); the rest live on a single client.

Shot counts are global per-class totals across the federation, divided as
evenly as integer arithmetic allows among the clients holding the class.
The test split is never partitioned; callers pass train labels only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from fedprompt.errors import ConfigError, DataError
from fedprompt.utils import TAG_LABELS, TAG_PARTITION, rng_for

REGIMES = ("iid", "extreme_noniid", "overlap")


@dataclass
class PartitionSpec:
    regime: str
    n_clients: int
    overlap: float | None
    shots: int | None
    seed: int
    assignment: list[np.ndarray]
    class_clients: dict[int, list[int]] = field(default_factory=dict)

    def client_sizes(self) -> list[int]:
        return [len(a) for a in self.assignment]

    def classes_on_multiple_clients(self, labels: np.ndarray) -> list[int]:
        seen: dict[int, set[int]] = {}
        for cid, idxs in enumerate(self.assignment):
            for cls in np.unique(labels[idxs]):
                seen.setdefault(int(cls), set()).add(cid)
        return sorted(c for c, s in seen.items() if len(s) > 1)

    def to_json(self) -> str:
        doc = {
            "regime": self.regime,
            "n_clients": self.n_clients,
            "overlap": self.overlap,
            "shots": self.shots,
            "seed": self.seed,
            "assignment": [a.tolist() for a in self.assignment],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PartitionSpec":
        doc = json.loads(text)
        return cls(
            regime=doc["regime"],
            n_clients=doc["n_clients"],
            overlap=doc.get("overlap"),
            shots=doc.get("shots"),
            seed=doc["seed"],
            assignment=[np.asarray(a, dtype=np.int64) for a in doc["assignment"]],
        )


def _per_class_pools(labels: np.ndarray, k: int, shots: int | None, rng) -> list[np.ndarray]:
    """Deterministically pick each class's participating sample indices."""
    pools = []
    for cls in range(k):
        idx = np.where(labels == cls)[0]
        if shots is not None:
            if len(idx) < shots:
                raise ConfigError(
                    f"class {cls} has {len(idx)} samples, fewer than shots={shots}"
                )
            idx = np.sort(rng.permutation(idx)[:shots])
        pools.append(idx)
    return pools


def _deal(pool: np.ndarray, owners: list[int], assignment: list[list[int]], rng, rotate: int) -> None:
    """Split one class pool across its owners as evenly as possible."""
    order = rng.permutation(pool)
    n = len(owners)
    base = len(order) // n
    extra = len(order) % n
    off = 0
    for j in range(n):
        take = base + (1 if (j + rotate) % n < extra else 0)
        assignment[owners[j]].extend(order[off : off + take].tolist())
        off += take


def partition(
    labels: np.ndarray,
    k: int,
    regime: str,
    n_clients: int,
    shots: int | None = None,
    seed: int = 0,
    overlap: float | None = None,
    classes_per_client: int | None = None,
) -> PartitionSpec:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError("label out of range")
    if n_clients < 1:
        raise ConfigError("need at least one client")
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}")
    rng = rng_for(seed, TAG_PARTITION)
    pools = _per_class_pools(labels, k, shots, rng)
    assignment: list[list[int]] = [[] for _ in range(n_clients)]
    class_clients: dict[int, list[int]] = {}

    if regime == "iid":
        if classes_per_client is None:
            for cls in range(k):
                owners = list(range(n_clients))
                class_clients[cls] = owners
                _deal(pools[cls], owners, assignment, rng, rotate=cls)
        else:
            # client-count sweep variant: each client holds a random class
            # subset of the given size; every class keeps at least one owner
            if not 1 <= classes_per_client <= k:
                raise ConfigError("classes_per_client out of range")
            owners_of: dict[int, list[int]] = {c: [] for c in range(k)}
            for cid in range(n_clients):
                chosen = rng.choice(k, size=classes_per_client, replace=False)
                for cls in sorted(int(c) for c in chosen):
                    owners_of[cls].append(cid)
            for cls in range(k):
                if not owners_of[cls]:
                    owners_of[cls].append(int(rng.integers(n_clients)))
                class_clients[cls] = owners_of[cls]
                _deal(pools[cls], owners_of[cls], assignment, rng, rotate=cls)
    elif regime == "extreme_noniid":
        if k < n_clients:
            raise ConfigError(
                f"extreme_noniid needs at least one class per client (k={k} < n={n_clients})"
            )
        for cls in range(k):
            owner = cls % n_clients
            class_clients[cls] = [owner]
            assignment[owner].extend(pools[cls].tolist())
    else:  # overlap
        rho = 0.0 if overlap is None else float(overlap)
        if not 0.0 <= rho <= 1.0:
            raise ConfigError("overlap ratio must be in [0, 1]")
        n_shared = round(rho * k)
        shared = set(int(c) for c in rng.choice(k, size=n_shared, replace=False)) if n_shared else set()
        for cls in range(k):
            home = cls % n_clients
            if cls in shared:
                if n_clients < 2:
                    raise ConfigError("overlap regime needs at least 2 clients")
                if len(pools[cls]) < 2:
                    raise ConfigError(f"class {cls} has too few samples to share")
                second = int(rng.integers(n_clients - 1))
                if second >= home:
                    second += 1
                class_clients[cls] = [home, second]
                order = rng.permutation(pools[cls])
                half = (len(order) + 1) // 2
                assignment[home].extend(order[:half].tolist())
                assignment[second].extend(order[half:].tolist())
            else:
                class_clients[cls] = [home]
                assignment[home].extend(pools[cls].tolist())

    arrays = [np.array(sorted(a), dtype=np.int64) for a in assignment]
    return PartitionSpec(
        regime=regime,
        n_clients=n_clients,
        overlap=overlap,
        shots=shots,
        seed=seed,
        assignment=arrays,
        class_clients=class_clients,
    )


def synthesize_labels(k: int, samples_per_class: int, seed: int) -> np.ndarray:
    """Balanced label vector, deterministically shuffled."""
    labels = np.repeat(np.arange(k, dtype=np.int64), samples_per_class)
    return rng_for(seed, TAG_LABELS).permutation(labels)
