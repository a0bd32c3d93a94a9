"""Experiment records and reproducibility plumbing.

One experiment run emits one JSONL line: a self-contained record holding
the config echo, the seed, per-trial results, and bound-check outcomes.
Timestamps and library versions live in dedicated fields so determinism
comparisons can strip them and compare the rest byte for byte.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import InvalidArgumentError

__all__ = [
    "ExperimentRecord",
    "append_record",
    "derive_rng",
    "failed_checks",
    "numeric_view",
    "read_records",
    "run_trials",
]

# stripped before determinism comparisons
VOLATILE_FIELDS = ("started", "finished", "duration_s", "versions")


def _label_entropy(label) -> int:
    """Stable nonnegative integer for one seed label."""
    if isinstance(label, bool):
        return int(label)
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise InvalidArgumentError(f"seed labels must be >= 0, got {label}")
        return int(label)
    digest = hashlib.blake2s(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    """Independent random stream for (master seed, label path).

    Labels are hashed individually (ints pass through, strings by a fixed
    digest) into a SeedSequence spawn key, so the stream for a given
    (seed, module, trial) never depends on worker count or scheduling.
    """
    key = tuple(_label_entropy(lab) for lab in labels)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.default_rng(seq)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _versions() -> dict:
    return {
        "mallows_lab": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


@dataclass
class ExperimentRecord:
    """One experiment run, serializable as a single JSON line."""

    command: str
    config: dict
    seed: int | None = None
    results: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    status: str = "ok"
    started: str = field(default_factory=_now)
    finished: str = ""
    duration_s: float = 0.0
    versions: dict = field(default_factory=_versions)

    def finish(self, status: str | None = None) -> "ExperimentRecord":
        self.finished = _now()
        t0 = datetime.datetime.fromisoformat(self.started)
        t1 = datetime.datetime.fromisoformat(self.finished)
        self.duration_s = (t1 - t0).total_seconds()
        if status is not None:
            self.status = status
        return self

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "results": self.results,
            "checks": list(self.checks),
            "status": self.status,
            "started": self.started,
            "finished": self.finished,
            "duration_s": self.duration_s,
            "versions": self.versions,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, allow_nan=False)


def append_record(path, record: ExperimentRecord) -> None:
    with open(path, "a") as fh:
        fh.write(record.to_json_line() + "\n")


def read_records(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def numeric_view(record: dict) -> str:
    """Canonical JSON of a record with volatile fields removed."""
    kept = {k: v for k, v in record.items() if k not in VOLATILE_FIELDS}
    return json.dumps(kept, sort_keys=True, allow_nan=False)


def failed_checks(record: ExperimentRecord | dict) -> list[dict]:
    checks = record.checks if isinstance(record, ExperimentRecord) else record["checks"]
    return [c for c in checks if not c.get("holds", False)]


def run_trials(trial_fn, count: int, master_seed: int, label, workers: int = 1):
    """Run `count` independent seeded trials, results in trial order.

    trial_fn(index, rng) -> result.  Streams derive from (master_seed,
    label, index) alone and results are merged by sorted index, so the
    output is identical for every worker count.
    """
    if count < 0:
        raise InvalidArgumentError(f"need count >= 0, got {count}")
    if workers < 1:
        raise InvalidArgumentError(f"need workers >= 1, got {workers}")
    if workers == 1:
        return [trial_fn(i, derive_rng(master_seed, label, i)) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            i: pool.submit(trial_fn, i, derive_rng(master_seed, label, i))
            for i in range(count)
        }
        return [futures[i].result() for i in sorted(futures)]
