"""Random sparse parameter selection and the restrict/lift coordinate maps.

Each time step draws its own selection of ``s`` out of ``p`` parameter
indices.  Draws are keyed by (seed, step_id) through a split seed sequence,
so step k's selection is reproducible without replaying steps 0..k-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SketchIndices:
    """Selected parameter indices for one time step."""

    indices: np.ndarray
    p: int
    step_id: int
    rng_seed: int
    with_replacement: bool = False

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("indices must be a flat vector")
        if idx.size < 1 or idx.size > self.p:
            raise ValueError("need 1 <= s <= p indices")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.p):
            raise ValueError(f"indices must lie in [0, {self.p})")
        diffs = np.diff(idx)
        if self.with_replacement:
            if np.any(diffs < 0):
                raise ValueError("indices must be sorted")
        else:
            if np.any(diffs <= 0):
                raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @property
    def s(self) -> int:
        return int(self.indices.size)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "step_id": self.step_id,
            "rng_seed": self.rng_seed,
            "with_replacement": self.with_replacement,
            "indices": self.indices.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SketchIndices":
        return cls(
            indices=np.asarray(d["indices"], dtype=np.int64),
            p=int(d["p"]),
            step_id=int(d["step_id"]),
            rng_seed=int(d["rng_seed"]),
            with_replacement=bool(d.get("with_replacement", False)),
        )


def _step_rng(rng_seed: int, step_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(rng_seed), spawn_key=(int(step_id),))
    return np.random.default_rng(ss)


def draw_sketch(
    p: int, s: int, step_id: int, rng_seed: int, with_replacement: bool = False
) -> SketchIndices:
    """Draw s parameter indices uniformly from {0, ..., p-1}.

    Default is without replacement (distinct columns); the with_replacement
    mode reproduces the plain i.i.d. draw, which may repeat indices.
    Deterministic per (rng_seed, step_id).
    """
    if not 1 <= s <= p:
        raise ValueError(f"need 1 <= s <= p, got s={s}, p={p}")
    rng = _step_rng(rng_seed, step_id)
    if with_replacement:
        idx = np.sort(rng.integers(0, p, size=s))
    elif s == p:
        idx = np.arange(p, dtype=np.int64)
    else:
        idx = np.sort(rng.choice(p, size=s, replace=False))
    return SketchIndices(
        indices=idx.astype(np.int64),
        p=p,
        step_id=step_id,
        rng_seed=rng_seed,
        with_replacement=with_replacement,
    )


def lift(sk: SketchIndices, v_s: np.ndarray) -> np.ndarray:
    """Embed an s-vector into R^p: selected coordinates get the values,
    everything else is zero.  Duplicate indices (replacement mode) add."""
    v_s = np.asarray(v_s)
    if v_s.shape != (sk.s,):
        raise ValueError(f"expected length {sk.s}, got {v_s.shape}")
    out = np.zeros(sk.p, dtype=v_s.dtype)
    if sk.with_replacement:
        np.add.at(out, sk.indices, v_s)
    else:
        out[sk.indices] = v_s
    return out


def restrict(sk: SketchIndices, v: np.ndarray) -> np.ndarray:
    """Adjoint of lift: pick out the selected coordinates."""
    v = np.asarray(v)
    if v.shape != (sk.p,):
        raise ValueError(f"expected length {sk.p}, got {v.shape}")
    return v[sk.indices]
