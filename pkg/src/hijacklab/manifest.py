"""Line-delimited experiment manifests: full configuration plus per-trial records.

Every experiment command emits one JSON object per line. Record kinds and their
fields are documented in the README; a manifest plus the referenced pool files
is sufficient to reproduce a run bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List

from hijacklab import __version__


@dataclass
class RunManifest:
    """Reproducibility envelope for one command invocation."""

    command: str
    configuration: Dict[str, object]
    seeds: List[int] = field(default_factory=list)
    pool_paths: List[str] = field(default_factory=list)
    output_paths: List[str] = field(default_factory=list)
    tool_version: str = __version__

    def to_record(self) -> Dict[str, object]:
        record = {"record": "run"}
        record.update(asdict(self))
        return record


def write_records(path, records: Iterable[Dict[str, object]]) -> int:
    """Append-free write of manifest records; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    return count


def read_records(path) -> List[Dict[str, object]]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def trial_record(kind: str, result, **extra) -> Dict[str, object]:
    """Flatten a TrialResult into a manifest record."""
    record: Dict[str, object] = {
        "record": kind,
        "success": result.success,
        "failure_cause": result.failure_cause.value if result.failure_cause else None,
        "steps": [
            {
                "target": s.target,
                "emitted": s.emitted,
                "target_prob": s.target_prob,
                "u": s.u,
                "matched": s.matched,
                "crafted": s.crafted,
                "hijack_cause": s.hijack_cause,
            }
            for s in result.steps
        ],
    }
    record.update(extra)
    return record
