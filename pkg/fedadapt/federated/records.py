"""Per-round ledger of a federated or centralized run."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union


@dataclass
class RoundRecord:
    round: int
    client_delta_norms: List[float]
    aggregated_delta_norm: float
    trainable_count: int
    num_clients: int
    bytes_per_value: int = 8
    samples: int = 0
    eval: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def bytes_up(self) -> int:
        return self.trainable_count * self.bytes_per_value * self.num_clients

    @property
    def bytes_down(self) -> int:
        return self.bytes_up

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "client_delta_norms": list(self.client_delta_norms),
            "aggregated_delta_norm": self.aggregated_delta_norm,
            "trainable_count": self.trainable_count,
            "num_clients": self.num_clients,
            "bytes_per_value": self.bytes_per_value,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "samples": self.samples,
            "eval": self.eval,
        }


def write_jsonl(records: Sequence[RoundRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return path


def read_jsonl(path: Union[str, Path]) -> List[dict]:
    with Path(path).open() as f:
        return [json.loads(line) for line in f if line.strip()]


def summary_rows(records: Sequence[RoundRecord]) -> List[dict]:
    """One flat row per evaluated round: ``<set>_<metric>`` columns."""
    rows = []
    for record in records:
        if not record.eval:
            continue
        row = {
            "round": record.round,
            "samples": record.samples,
            "aggregated_delta_norm": record.aggregated_delta_norm,
            "bytes_up": record.bytes_up,
        }
        for name in sorted(record.eval):
            for metric in ("wer", "loss", "frame_accuracy"):
                if metric in record.eval[name]:
                    row[f"{name}_{metric}"] = record.eval[name][metric]
        rows.append(row)
    return rows


def write_csv(rows: Sequence[dict], path: Union[str, Path], fieldnames: Optional[List[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(k for k in row if k not in fieldnames)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return path
