"""Trajectories, datasets and their newline-delimited file format.

A dataset file starts with a header record::

    {"kind": "header", "env": "maze", "d_s": 4, "d_a": 2, "seed": 0, "constraint": "box:0.1"}

followed by one ``{"states": [[...], ...], "actions": [[...], ...]}`` record
per trajectory. Reals are written with 17 significant digits so files
round-trip exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt_real(x) -> str:
    text = format(float(x), ".17g")
    # JSON reads "-0" as the integer 0; keep the sign bit
    return "-0.0" if text == "-0" else text


def fmt_array(arr) -> str:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        return fmt_real(arr)
    return "[" + ",".join(fmt_array(x) for x in arr) + "]"


def _fmt_value(v) -> str:
    if isinstance(v, np.ndarray):
        return fmt_array(v)
    if isinstance(v, (bool, np.bool_)) or v is None:
        return json.dumps(bool(v) if v is not None else None)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_real(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return dump_record(v)
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dump_record(rec: dict) -> str:
    """JSON object text with fixed key order and full-precision reals."""
    return "{" + ",".join(f"{json.dumps(k)}:{_fmt_value(v)}" for k, v in rec.items()) + "}"


@dataclass
class Trajectory:
    states: np.ndarray  # (L + 1, d_s)
    actions: np.ndarray  # (L, d_a)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions, dtype=float)
        if self.actions.ndim == 1:
            self.actions = self.actions.reshape(len(self.actions), -1) if self.actions.size else self.actions.reshape(0, 0)
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(f"{len(self.states)} states for {len(self.actions)} actions")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise ValueError("trajectory has non-finite entries")

    def __len__(self) -> int:
        return len(self.actions)

    def transitions(self):
        return self.states[:-1], self.actions, self.states[1:]

    def to_record(self) -> dict:
        return {"states": self.states, "actions": self.actions}

    @classmethod
    def from_record(cls, rec: dict, d_a: int | None = None) -> "Trajectory":
        actions = np.asarray(rec["actions"], dtype=float)
        if actions.size == 0 and d_a is not None:
            actions = actions.reshape(0, d_a)
        return cls(np.asarray(rec["states"], dtype=float), actions)

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("dataset is empty")
        d_s = self.trajectories[0].states.shape[1]
        for t in self.trajectories:
            if t.states.shape[1] != d_s:
                raise ValueError("inhomogeneous state dimensions")

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def __iter__(self):
        return iter(self.trajectories)

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.meta == other.meta and self.trajectories == other.trajectories

    @property
    def d_s(self):
        return self.trajectories[0].states.shape[1]

    def n_transitions(self):
        return sum(len(t) for t in self.trajectories)

    def state_action_pairs(self):
        s = np.concatenate([t.states[:-1] for t in self.trajectories if len(t)])
        a = np.concatenate([t.actions for t in self.trajectories if len(t)])
        return s, a


HEADER_KEYS = ("env", "d_s", "d_a", "seed", "constraint")


def write_dataset(path, ds: Dataset, extra_fields=None) -> None:
    """Write ``ds``; ``extra_fields[i]`` adds keys to trajectory record ``i``."""
    header = {"kind": "header"}
    for k in HEADER_KEYS:
        header[k] = ds.meta.get(k)
    for k, v in ds.meta.items():
        if k not in header:
            header[k] = v
    lines = [dump_record(header)]
    for i, t in enumerate(ds.trajectories):
        rec = t.to_record()
        if extra_fields is not None:
            rec.update(extra_fields[i])
        lines.append(dump_record(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path, with_extras: bool = False):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.pop("kind", None) != "header":
        raise ValueError(f"{path}: first record is not a header")
    d_a = header.get("d_a")
    trajs, extras = [], []
    for ln in lines[1:]:
        rec = json.loads(ln)
        trajs.append(Trajectory.from_record(rec, d_a))
        extras.append({k: v for k, v in rec.items() if k not in ("states", "actions")})
    ds = Dataset(trajs, header)
    return (ds, extras) if with_extras else ds


def dump_trajectories_csv(ds: Dataset, out_dir, prefix="traj") -> list[Path]:
    """One plot-ready CSV per trajectory with columns ``t, s0, s1, ...``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(ds.trajectories):
        p = out_dir / f"{prefix}_{i:04d}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"s{k}" for k in range(t.states.shape[1])])
            for step, s in enumerate(t.states):
                w.writerow([step] + [fmt_real(x) for x in s])
        paths.append(p)
    return paths
