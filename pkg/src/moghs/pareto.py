"""Non-dominated archive maintenance and Pareto front quality metrics.

All rewards are maximized.  Fronts are float64 arrays of shape (n, m), one
reward vector per row.  The hypervolume reference point defaults to the
origin; points are clipped up to the reference before measuring.
"""

from __future__ import annotations

import csv
import io

import numpy as np


def dominates(a, b) -> bool:
    """True iff a >= b in every coordinate and a > b in at least one."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_filter(points: np.ndarray) -> np.ndarray:
    """Indices of the non-dominated rows of ``points``, keeping first duplicates."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        p = pts[i]
        keep &= ~(np.all(pts <= p, axis=1) & np.any(pts < p, axis=1))
        dup = np.all(pts == p, axis=1)
        dup[: i + 1] = False
        keep &= ~dup
        if np.any(np.all(pts[keep] >= p, axis=1) & np.any(pts[keep] > p, axis=1)):
            keep[i] = False
    return np.nonzero(keep)[0]


class ParetoArchive:
    """Global archive of mutually non-dominated (design key, reward) entries.

    Re-inserting a key replaces its previous entry (a design's reward only
    improves over repeated evaluation), and reward vectors equal to an
    existing entry are dropped so the earliest key wins.
    """

    def __init__(self, m: int):
        self.m = m
        self.keys: list = []
        self.rewards: list[np.ndarray] = []
        self.episodes: list[int] = []

    def __len__(self) -> int:
        return len(self.keys)

    def front(self) -> np.ndarray:
        if not self.rewards:
            return np.empty((0, self.m))
        return np.array(self.rewards, dtype=float)

    def insert(self, key, reward, episode: int) -> bool:
        """Insert iff non-dominated; drops entries the new reward dominates."""
        r = np.asarray(reward, dtype=float)
        if r.shape != (self.m,):
            raise ValueError(f"expected reward of length {self.m}, got {r.shape}")
        if key in self.keys:
            self._remove(self.keys.index(key))
        for q in self.rewards:
            if np.all(q >= r):  # dominated, or an exact duplicate (earliest key wins)
                return False
        live = [i for i, q in enumerate(self.rewards) if not dominates(r, q)]
        if len(live) != len(self.rewards):
            self.keys = [self.keys[i] for i in live]
            self.rewards = [self.rewards[i] for i in live]
            self.episodes = [self.episodes[i] for i in live]
        self.keys.append(key)
        self.rewards.append(r)
        self.episodes.append(episode)
        return True

    def _remove(self, idx: int) -> None:
        del self.keys[idx], self.rewards[idx], self.episodes[idx]


def _hv_2d(pts: np.ndarray, ref: np.ndarray) -> float:
    order = np.argsort(-pts[:, 0])
    vol = 0.0
    prev_y = ref[1]
    for x, y in pts[order]:
        if y > prev_y:
            vol += (x - ref[0]) * (y - prev_y)
            prev_y = y
    return vol


def _hv_3d(pts: np.ndarray, ref: np.ndarray) -> float:
    zs = np.unique(pts[:, 2])[::-1]
    vol = 0.0
    for i, z in enumerate(zs):
        z_lo = zs[i + 1] if i + 1 < len(zs) else ref[2]
        active = pts[pts[:, 2] >= z][:, :2]
        vol += _hv_2d(active, ref[:2]) * (z - z_lo)
    return vol


def _clip_to_ref(front: np.ndarray, ref: np.ndarray) -> np.ndarray:
    pts = np.maximum(np.asarray(front, dtype=float), ref)
    return pts[np.all(pts > ref, axis=1)]  # points on the boundary enclose no volume


def hypervolume(front, ref=None, *, mc_samples: int = 1_000_000, rng=None) -> float:
    """Volume dominated by ``front`` relative to ``ref`` (default: origin).

    Exact for 2 and 3 objectives; Monte-Carlo above that (see
    :func:`hypervolume_mc` for the standard error).
    """
    front = np.atleast_2d(np.asarray(front, dtype=float))
    if front.size == 0:
        return 0.0
    m = front.shape[1]
    ref = np.zeros(m) if ref is None else np.asarray(ref, dtype=float)
    pts = _clip_to_ref(front, ref)
    if pts.size == 0:
        return 0.0
    if m == 1:
        return float(pts.max() - ref[0])
    if m == 2:
        return _hv_2d(pts, ref)
    if m == 3:
        return _hv_3d(pts, ref)
    return hypervolume_mc(front, ref, samples=mc_samples, rng=rng)[0]


def hypervolume_mc(front, ref=None, *, samples: int = 1_000_000, rng=None):
    """Monte-Carlo hypervolume estimate; returns (value, standard_error)."""
    front = np.atleast_2d(np.asarray(front, dtype=float))
    m = front.shape[1]
    ref = np.zeros(m) if ref is None else np.asarray(ref, dtype=float)
    pts = _clip_to_ref(front, ref)
    if pts.size == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    hi = pts.max(axis=0)
    box = float(np.prod(hi - ref))
    hits = 0
    done = 0
    while done < samples:
        n = min(65536, samples - done)
        u = rng.uniform(ref, hi, size=(n, m))
        hits += int(np.any(np.all(pts[None, :, :] >= u[:, None, :], axis=2), axis=1).sum())
        done += n
    p = hits / samples
    return box * p, box * np.sqrt(p * (1.0 - p) / samples)


def _min_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def generational_distance(front, reference, p: float = 1.0) -> float:
    """Mean (p-norm) Euclidean distance from front points to the reference front."""
    front = np.atleast_2d(np.asarray(front, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if front.size == 0 or reference.size == 0:
        raise ValueError("generational distance requires nonempty fronts")
    d = _min_dists(front, reference)
    return float((d**p).sum() ** (1.0 / p) / len(front))


def inverse_generational_distance(front, reference) -> float:
    """Mean Euclidean distance from reference front points to the front."""
    front = np.atleast_2d(np.asarray(front, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if front.size == 0 or reference.size == 0:
        raise ValueError("inverse generational distance requires nonempty fronts")
    return float(_min_dists(reference, front).mean())


def build_reference_set(reward_logs) -> np.ndarray:
    """Pareto front of the union of every reward vector across runs."""
    stacked = [np.atleast_2d(np.asarray(r, dtype=float)) for r in reward_logs if len(r)]
    if not stacked:
        raise ValueError("no rewards to build a reference set from")
    union = np.vstack(stacked)
    return union[pareto_filter(union)]


def write_front_csv(path, front, objective_kinds) -> None:
    front = np.atleast_2d(np.asarray(front, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(objective_kinds)
        for row in front:
            w.writerow([repr(float(v)) for v in row])


def read_front_csv(path):
    """Returns (front array, objective kind header)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    return data.reshape(-1, len(header)), header


def format_front_csv(front, objective_kinds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(objective_kinds)
    for row in np.atleast_2d(np.asarray(front, dtype=float)):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
