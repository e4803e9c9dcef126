"""Observation container shared by the generators and the estimators."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import InvalidArgumentError


def _mat(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


@dataclass
class ObservationSet:
    """Stage-1 triples ``(a, z, w)``, stage-2 triples ``(a, z, y)`` and optional extras.

    Synthetic generators sample full records, so ``y1`` (outcomes on the
    stage-1 split) and ``w2`` (outcome proxies on the stage-2 split) are also
    available; cross-stage tuning needs them. ``a3, z3, w3, y3`` hold the
    policy-evaluation split, and ``extra_w`` the optional outcome-proxy sample
    used for the mean feature.
    """

    a1: np.ndarray
    z1: np.ndarray
    w1: np.ndarray
    a2: np.ndarray
    z2: np.ndarray
    y2: np.ndarray
    y1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    extra_w: Optional[np.ndarray] = None
    a3: Optional[np.ndarray] = None
    z3: Optional[np.ndarray] = None
    w3: Optional[np.ndarray] = None
    y3: Optional[np.ndarray] = None
    internals: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("a1", "z1", "w1", "a2", "z2", "w2", "extra_w", "a3", "z3", "w3"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, _mat(v))
        for name in ("y1", "y2", "y3"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float64).reshape(-1))
        m, n = self.a1.shape[0], self.a2.shape[0]
        if m == 0 or n == 0:
            raise InvalidArgumentError("both stages need at least one observation")
        if not (self.z1.shape[0] == self.w1.shape[0] == m):
            raise InvalidArgumentError("stage-1 arrays have different lengths")
        if not (self.z2.shape[0] == self.y2.shape[0] == n):
            raise InvalidArgumentError("stage-2 arrays have different lengths")
        if self.a1.shape[1] != self.a2.shape[1] or self.z1.shape[1] != self.z2.shape[1]:
            raise InvalidArgumentError("treatment/proxy dimensions differ between stages")
        for name in ("y1", "y2", "y3"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{name} contains non-finite outcomes")

    @property
    def m(self) -> int:
        return self.a1.shape[0]

    @property
    def n(self) -> int:
        return self.a2.shape[0]

    @property
    def has_full_records(self) -> bool:
        return self.y1 is not None and self.w2 is not None

    @property
    def has_eval_split(self) -> bool:
        return self.a3 is not None and self.w3 is not None

    def outcome_proxy_sample(self) -> np.ndarray:
        """``S_W``: the extra sample when present, otherwise stage-1 ``w``."""
        return self.extra_w if self.extra_w is not None else self.w1

    def swapped(self) -> "ObservationSet":
        """Exchange the two stages (requires full records)."""
        if not self.has_full_records:
            raise InvalidArgumentError("swapping stages needs (a, z, w, y) on both splits")
        return ObservationSet(self.a2, self.z2, self.w2, self.a1, self.z1, self.y1, y1=self.y2, w2=self.w1)

    def dims(self) -> Tuple[int, int, int]:
        return self.a1.shape[1], self.z1.shape[1], self.w1.shape[1]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(data: ObservationSet, path, sidecar: Optional[dict] = None) -> None:
    """Write one row per record with a ``split`` column (1, 2 or 3).

    Values are written with ``repr`` so a round trip is exact. Missing
    variables (e.g. ``y`` on stage 1 of real data) are left empty.
    """
    path = Path(path)
    da, dz, dw = data.dims()
    header = ["split"] + [f"a_{i}" for i in range(da)] + [f"z_{i}" for i in range(dz)] + [f"w_{i}" for i in range(dw)] + ["y"]
    splits = [
        (1, data.a1, data.z1, data.w1, data.y1),
        (2, data.a2, data.z2, data.w2, data.y2),
    ]
    if data.has_eval_split:
        splits.append((3, data.a3, data.z3, data.w3, data.y3))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for split, a, z, w, y in splits:
            for i in range(a.shape[0]):
                row = [str(split)] + [_fmt(v) for v in a[i]] + [_fmt(v) for v in z[i]]
                row += [_fmt(v) for v in w[i]] if w is not None else [""] * dw
                row.append(_fmt(y[i]) if y is not None else "")
                writer.writerow(row)
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_csv(path) -> ObservationSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = {name: i for i, name in enumerate(header)}
    if "split" not in cols or "y" not in cols:
        raise InvalidArgumentError(f"{path} is missing the split or y column")

    def block(prefix):
        names = sorted((c for c in header if c.startswith(prefix)), key=lambda c: int(c[len(prefix):]))
        return [cols[c] for c in names]

    ia, iz, iw = block("a_"), block("z_"), block("w_")
    by_split: Dict[int, list] = {1: [], 2: [], 3: []}
    for r in rows:
        by_split[int(r[cols["split"]])].append(r)

    def arr(rs, idx):
        if not rs or any(r[i] == "" for r in rs for i in idx):
            return None
        return np.array([[float(r[i]) for i in idx] for r in rs])

    def vec(rs):
        out = arr(rs, [cols["y"]])
        return None if out is None else out[:, 0]

    s1, s2, s3 = by_split[1], by_split[2], by_split[3]
    return ObservationSet(
        arr(s1, ia), arr(s1, iz), arr(s1, iw),
        arr(s2, ia), arr(s2, iz), vec(s2),
        y1=vec(s1), w2=arr(s2, iw),
        a3=arr(s3, ia), z3=arr(s3, iz), w3=arr(s3, iw), y3=vec(s3),
    )
