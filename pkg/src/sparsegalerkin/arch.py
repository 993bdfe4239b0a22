"""Network architecture description and flat parameter handling.

The surrogate is a feed-forward MLP whose first layer is a periodic
embedding (cosine features, one period per input dimension), followed by
``num_hidden_layers - 1`` affine+activation blocks of fixed width, and a
final affine layer to a scalar output.  All parameters live in one flat
float vector; the layout below is the single source of truth for how that
vector decomposes into layers.

Conventional "depth" counts used elsewhere (e.g. a "7-layer network")
include the embedding and the output layer, so depth = num_hidden_layers + 1.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ACTIVATIONS = ("rational_3_2", "tanh")

# Degree-(3,2) minimax approximation of ReLU on [-1, 1], used to initialize
# the learnable rational activations.  Numerator is c3*x^3+c2*x^2+c1*x+c0,
# denominator is d2*x^2+d1*x+1 (constant term pinned to 1; six learnable
# coefficients per layer).  Verified by equioscillation: the error attains
# +/-0.0219 at seven alternating points.
RATIONAL_INIT = np.array([1.1915, 1.5957, 0.5, 0.0218, 2.3830, 0.0])

N_RATIONAL_COEFFS = 6


class LayoutEntry(NamedTuple):
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class ArchSpec:
    """Static description of one network architecture.

    ``periods`` holds the embedding period per input dimension; inputs are
    only ever seen through cos(2*pi*x_i/P_i + phase), so the network is
    exactly periodic with period P_i in dimension i.
    """

    input_dim: int
    hidden_width: int
    num_hidden_layers: int
    periods: tuple
    activation: str = "rational_3_2"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.num_hidden_layers < 1:
            raise ValueError("num_hidden_layers must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        periods = tuple(float(p) for p in self.periods)
        if len(periods) != self.input_dim:
            raise ValueError("need one period per input dimension")
        if any(p <= 0 for p in periods):
            raise ValueError("periods must be positive")
        object.__setattr__(self, "periods", periods)

    @property
    def n_blocks(self) -> int:
        """Number of affine+activation blocks between embedding and output."""
        return self.num_hidden_layers - 1

    @property
    def rational(self) -> bool:
        return self.activation == "rational_3_2"

    @property
    def param_count(self) -> int:
        d, w = self.input_dim, self.hidden_width
        block = w * w + w + (N_RATIONAL_COEFFS if self.rational else 0)
        return 3 * w * d + self.n_blocks * block + w + 1

    def layout(self) -> tuple:
        d, w = self.input_dim, self.hidden_width
        entries = []
        off = 0

        def add(name, shape):
            nonlocal off
            entries.append(LayoutEntry(name, shape, off))
            off += int(np.prod(shape))

        add("emb_a", (w, d))
        add("emb_phi", (w, d))
        add("emb_b", (w, d))
        for i in range(self.n_blocks):
            add(f"w{i}", (w, w))
            add(f"b{i}", (w,))
            if self.rational:
                add(f"rat{i}", (N_RATIONAL_COEFFS,))
        add("out_w", (w,))
        add("out_b", (1,))
        assert off == self.param_count
        return tuple(entries)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_width": self.hidden_width,
            "num_hidden_layers": self.num_hidden_layers,
            "periods": list(self.periods),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_width=int(d["hidden_width"]),
            num_hidden_layers=int(d["num_hidden_layers"]),
            periods=tuple(d["periods"]),
            activation=str(d["activation"]),
        )

    def arch_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class KernelSpec(NamedTuple):
    """Flattened architecture constants handed to the numeric kernels."""

    d: int
    w: int
    nblocks: int
    rational: bool
    omega: np.ndarray  # 2*pi / period, per input dimension
    p: int


def kernel_spec(arch: ArchSpec) -> KernelSpec:
    omega = 2.0 * np.pi / np.asarray(arch.periods, dtype=np.float64)
    return KernelSpec(
        d=arch.input_dim,
        w=arch.hidden_width,
        nblocks=arch.n_blocks,
        rational=arch.rational,
        omega=omega,
        p=arch.param_count,
    )


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector plus the layout that structures it."""

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ValueError("parameter values must be a flat vector")
        total = self.layout[-1].offset + self.layout[-1].size
        if values.shape[0] != total:
            raise ValueError(
                f"layout covers {total} entries but got {values.shape[0]} values"
            )
        object.__setattr__(self, "values", values)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    def view(self, name: str) -> np.ndarray:
        for entry in self.layout:
            if entry.name == name:
                return self.values[entry.offset : entry.offset + entry.size].reshape(
                    entry.shape
                )
        raise KeyError(name)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


def make_params(arch: ArchSpec, values: np.ndarray) -> ParamVector:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (arch.param_count,):
        raise ValueError(
            f"expected {arch.param_count} parameters for this architecture, "
            f"got {values.shape}"
        )
    return ParamVector(values, arch.layout())


def unpack(arch: ArchSpec, values: np.ndarray) -> dict:
    """Structured (named, shaped) views into a flat parameter vector."""
    out = {}
    for entry in arch.layout():
        out[entry.name] = values[entry.offset : entry.offset + entry.size].reshape(
            entry.shape
        )
    return out


def pack(arch: ArchSpec, struct: dict) -> np.ndarray:
    """Inverse of :func:`unpack`: flatten named arrays back into one vector."""
    values = np.empty(arch.param_count, dtype=np.float64)
    for entry in arch.layout():
        arr = np.asarray(struct[entry.name], dtype=np.float64)
        if arr.shape != entry.shape:
            raise ValueError(f"{entry.name}: expected shape {entry.shape}")
        values[entry.offset : entry.offset + entry.size] = arr.ravel()
    return values


def init_params(arch: ArchSpec, seed: int) -> ParamVector:
    """Seeded default initialization.

    Affine layers use uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).  Embedding
    amplitudes/offsets use fan_in = input_dim; phases are uniform over
    (-pi, pi) so the cosine features start spread over their period.
    Rational coefficients start at the minimax-ReLU values (not random).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    d, w = arch.input_dim, arch.hidden_width
    struct = {}
    bound_emb = 1.0 / np.sqrt(d)
    struct["emb_a"] = rng.uniform(-bound_emb, bound_emb, size=(w, d))
    struct["emb_phi"] = rng.uniform(-np.pi, np.pi, size=(w, d))
    struct["emb_b"] = rng.uniform(-bound_emb, bound_emb, size=(w, d))
    bound_w = 1.0 / np.sqrt(w)
    for i in range(arch.n_blocks):
        struct[f"w{i}"] = rng.uniform(-bound_w, bound_w, size=(w, w))
        struct[f"b{i}"] = rng.uniform(-bound_w, bound_w, size=(w,))
        if arch.rational:
            struct[f"rat{i}"] = RATIONAL_INIT.copy()
    struct["out_w"] = rng.uniform(-bound_w, bound_w, size=(w,))
    struct["out_b"] = rng.uniform(-bound_w, bound_w, size=(1,))
    return ParamVector(pack(arch, struct), arch.layout())


def save_params(path, arch: ArchSpec, params: ParamVector, precision: str = "float64"):
    meta = {
        "arch": arch.to_dict(),
        "arch_hash": arch.arch_hash(),
        "precision": precision,
        "p": params.p,
    }
    np.savez(path, values=params.values, meta=json.dumps(meta, sort_keys=True))


def load_params(path, arch: ArchSpec | None = None):
    """Load a saved parameter vector; returns (arch, ParamVector).

    If ``arch`` is given, the stored arch hash must match.
    """
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        values = np.asarray(data["values"], dtype=np.float64)
    stored = ArchSpec.from_dict(meta["arch"])
    if arch is not None and arch.arch_hash() != meta["arch_hash"]:
        raise ValueError(
            f"architecture hash mismatch: file has {meta['arch_hash']}, "
            f"expected {arch.arch_hash()}"
        )
    if values.shape[0] != meta["p"]:
        raise ValueError("stored parameter count disagrees with header")
    return stored, make_params(stored, values)
