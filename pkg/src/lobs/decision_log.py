"""CSV decision logs: an auditable, replayable record of every prune.

The header carries ``key=value`` comment lines (always including the
SHA-256 of the base model file) followed by one row per pruning action.
Floats are written with ``repr`` so they round-trip exactly.
"""

import csv
from dataclasses import dataclass

COLUMNS = ("stage", "layer", "q", "row", "col", "theta", "sensitivity",
           "cumulative_cr")


@dataclass
class LogRow:
    stage: int
    layer: int
    q: int
    row: int
    col: int
    theta: float
    sensitivity: float
    cumulative_cr: float


class DecisionLogWriter:
    """Streams decisions to disk as they are made."""

    def __init__(self, path, base_model_sha256, criterion, extra=None):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._fh.write("# decision-log v1\n")
        self._fh.write(f"# base_model_sha256={base_model_sha256}\n")
        self._fh.write(f"# criterion={criterion}\n")
        for key, value in (extra or {}).items():
            self._fh.write(f"# {key}={value}\n")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(COLUMNS)

    def write(self, stage, decision, cumulative_cr):
        self._writer.writerow([
            stage, decision.layer_index, decision.q, decision.row,
            decision.col, repr(float(decision.theta)),
            repr(float(decision.sensitivity)), repr(float(cumulative_cr)),
        ])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_decision_log(path):
    """Returns (metadata dict, ordered LogRow list)."""
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        header_seen = False
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    meta[key.strip()] = value.strip()
                continue
            if not header_seen:
                names = next(csv.reader([line]))
                if tuple(names) != COLUMNS:
                    raise ValueError(
                        f"unexpected decision-log columns {names}")
                header_seen = True
                continue
            fields = next(csv.reader([line]))
            if not fields:
                continue
            rows.append(LogRow(int(fields[0]), int(fields[1]), int(fields[2]),
                               int(fields[3]), int(fields[4]),
                               float(fields[5]), float(fields[6]),
                               float(fields[7])))
    return meta, rows
