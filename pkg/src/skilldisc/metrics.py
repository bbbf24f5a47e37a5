"""Append-only JSONL metric streams.

One record per logging event with mandatory keys (step, wall_time, phase).
wall_time is the simulated wall clock: collected env steps divided by the
20 Hz control rate, which keeps re-runs byte-identical. Records are held
until the step counter advances so that several sources logging at the same
step merge into one line; steps must be strictly increasing.
"""

from __future__ import annotations

import json

CONTROL_HZ = 20.0


class MetricsWriter:
    def __init__(self, path, phase: str):
        self.path = str(path)
        self.phase = phase
        self._fh = open(self.path, "w")
        self._pending: dict | None = None

    def log(self, step: int, **fields) -> None:
        if self._pending is not None:
            if step < self._pending["step"]:
                raise ValueError(f"step {step} after {self._pending['step']}: stream must be monotone")
            if step == self._pending["step"]:
                self._pending.update(fields)
                return
            self._flush()
        self._pending = {"step": int(step), "wall_time": step / CONTROL_HZ,
                         "phase": self.phase, **fields}

    def _flush(self) -> None:
        if self._pending is not None:
            self._fh.write(json.dumps(self._pending, sort_keys=True) + "\n")
            self._pending = None

    def close(self) -> None:
        self._flush()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
