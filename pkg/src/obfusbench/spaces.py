"""Mixed discrete/continuous spaces and their flat vector encoding.

A :class:`MixedSpace` is a product of bounded intervals and categorical
components. Points are flattened as ``[continuous..., one-hot block per
discrete part...]``; decoders emit logits for the one-hot blocks, which are
resolved by softmax during training and by argmax at decode time.

Batched code paths use the *packed* layout: an ``(n, n_continuous +
n_discrete)`` float array whose trailing columns hold category indices. It
is the layout the estimators in this package accept as ``X``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidPoint, InvalidSpace, InvalidVector, UnsupportedVersion

SPACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MixedSpace:
    continuous: tuple[tuple[float, float], ...] = ()
    discrete: tuple[int, ...] = ()

    def __post_init__(self):
        cont = tuple((float(lo), float(hi)) for lo, hi in self.continuous)
        disc = tuple(int(c) for c in self.discrete)
        if not cont and not disc:
            raise InvalidSpace("a space needs at least one part")
        for lo, hi in cont:
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise InvalidSpace(f"bad interval [{lo}, {hi}]")
        for c in disc:
            if c < 2:
                raise InvalidSpace(f"discrete part needs >= 2 categories, got {c}")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "discrete", disc)

    @classmethod
    def box(cls, low: float, high: float, n: int, discrete: Sequence[int] = ()) -> "MixedSpace":
        return cls(continuous=((low, high),) * n, discrete=tuple(discrete))

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @property
    def n_discrete(self) -> int:
        return len(self.discrete)

    @property
    def flat_dim(self) -> int:
        return self.n_continuous + sum(self.discrete)

    @property
    def packed_dim(self) -> int:
        return self.n_continuous + self.n_discrete

    @property
    def affine_dim(self) -> int:
        """Dimension of the affine hull of all flattened points.

        Each one-hot block of ``c`` entries lies on a ``(c - 1)``-simplex, so
        this is ``flat_dim - n_discrete``.
        """
        return self.flat_dim - self.n_discrete

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.continuous], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.continuous], dtype=float)

    def block_slices(self) -> list[slice]:
        """Slices of the flat vector occupied by each discrete block."""
        out, start = [], self.n_continuous
        for c in self.discrete:
            out.append(slice(start, start + c))
            start += c
        return out

    def n_combinations(self) -> int:
        return int(np.prod(self.discrete)) if self.discrete else 1

    def contains(self, point: "SpacePoint") -> bool:
        try:
            check_point(self, point)
        except InvalidPoint:
            return False
        return True

    def to_document(self) -> dict:
        return {
            "version": SPACE_FORMAT_VERSION,
            "continuous": [[lo, hi] for lo, hi in self.continuous],
            "discrete": list(self.discrete),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "MixedSpace":
        if not isinstance(doc, dict) or "version" not in doc:
            raise FormatError("space document lacks a version tag")
        if doc["version"] != SPACE_FORMAT_VERSION:
            raise UnsupportedVersion(f"space document version {doc['version']!r}")
        try:
            cont = tuple((lo, hi) for lo, hi in doc["continuous"])
            disc = tuple(doc["discrete"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed space document: {exc}") from exc
        return cls(continuous=cont, discrete=disc)


@dataclass(frozen=True)
class SpacePoint:
    continuous: tuple[float, ...] = ()
    discrete: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "continuous", tuple(float(v) for v in self.continuous))
        object.__setattr__(self, "discrete", tuple(int(v) for v in self.discrete))


def check_point(space: MixedSpace, point: SpacePoint) -> None:
    if len(point.continuous) != space.n_continuous or len(point.discrete) != space.n_discrete:
        raise InvalidPoint(
            f"point has {len(point.continuous)}+{len(point.discrete)} parts, "
            f"space expects {space.n_continuous}+{space.n_discrete}"
        )
    for v, (lo, hi) in zip(point.continuous, space.continuous):
        if not lo <= v <= hi:
            raise InvalidPoint(f"continuous value {v} outside [{lo}, {hi}]")
    for v, c in zip(point.discrete, space.discrete):
        if not 0 <= v < c:
            raise InvalidPoint(f"category {v} outside [0, {c})")


def save_space(space: MixedSpace, path) -> None:
    Path(path).write_text(json.dumps(space.to_document(), indent=1) + "\n")


def load_space(path) -> MixedSpace:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return MixedSpace.from_document(doc)


# -- sampling ---------------------------------------------------------------

def sample(space: MixedSpace, rng: np.random.Generator) -> SpacePoint:
    cont = tuple(rng.uniform(lo, hi) for lo, hi in space.continuous)
    disc = tuple(int(rng.integers(c)) for c in space.discrete)
    return SpacePoint(cont, disc)


def sample_packed(space: MixedSpace, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` points from the uniform product distribution, packed."""
    out = np.empty((n, space.packed_dim))
    if space.n_continuous:
        out[:, : space.n_continuous] = rng.uniform(space.lower, space.upper, size=(n, space.n_continuous))
    if space.n_discrete:
        out[:, space.n_continuous :] = rng.integers(0, space.discrete, size=(n, space.n_discrete))
    return out


# -- packed <-> points ------------------------------------------------------

def pack(space: MixedSpace, points: Sequence[SpacePoint]) -> np.ndarray:
    out = np.empty((len(points), space.packed_dim))
    for i, p in enumerate(points):
        check_point(space, p)
        out[i, : space.n_continuous] = p.continuous
        out[i, space.n_continuous :] = p.discrete
    return out


def unpack(space: MixedSpace, packed: np.ndarray) -> list[SpacePoint]:
    nc = space.n_continuous
    return [SpacePoint(tuple(row[:nc]), tuple(int(v) for v in row[nc:])) for row in np.atleast_2d(packed)]


def check_packed(space: MixedSpace, X) -> np.ndarray:
    """Validate a packed batch and return it as a float 2-D array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != space.packed_dim:
        raise InvalidPoint(f"expected packed shape (n, {space.packed_dim}), got {X.shape}")
    nc = space.n_continuous
    if nc:
        cont = X[:, :nc]
        if not np.all((cont >= space.lower) & (cont <= space.upper)):
            raise InvalidPoint("continuous values outside space bounds")
    if space.n_discrete:
        disc = X[:, nc:]
        if not np.all(disc == np.round(disc)) or np.any(disc < 0) or np.any(disc >= np.array(space.discrete)):
            raise InvalidPoint("discrete columns must hold valid category indices")
    return X


# -- flatten / unflatten ----------------------------------------------------

def flatten(space: MixedSpace, point: SpacePoint) -> np.ndarray:
    check_point(space, point)
    return flatten_packed(space, pack(space, [point]))[0]


def flatten_packed(space: MixedSpace, packed: np.ndarray) -> np.ndarray:
    packed = np.atleast_2d(packed)
    n, nc = packed.shape[0], space.n_continuous
    out = np.zeros((n, space.flat_dim))
    out[:, :nc] = packed[:, :nc]
    rows = np.arange(n)
    for j, sl in enumerate(space.block_slices()):
        out[rows, sl.start + packed[:, nc + j].astype(int)] = 1.0
    return out


def unflatten(space: MixedSpace, vector) -> SpacePoint:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.shape[0] != space.flat_dim:
        raise InvalidVector(f"expected vector of length {space.flat_dim}, got shape {v.shape}")
    return unpack(space, unflatten_packed(space, v[None, :]))[0]


def unflatten_packed(space: MixedSpace, flat: np.ndarray) -> np.ndarray:
    """Resolve flat vectors to valid packed points (clamp + first-index argmax)."""
    flat = np.atleast_2d(np.asarray(flat, dtype=float))
    if flat.shape[1] != space.flat_dim:
        raise InvalidVector(f"expected vectors of length {space.flat_dim}, got {flat.shape[1]}")
    nc = space.n_continuous
    out = np.empty((flat.shape[0], space.packed_dim))
    if nc:
        out[:, :nc] = np.clip(flat[:, :nc], space.lower, space.upper)
    for j, sl in enumerate(space.block_slices()):
        # np.argmax returns the first maximal index, which is the declared tie rule
        out[:, nc + j] = np.argmax(flat[:, sl], axis=1)
    return out


# -- reconstruction metric and hinge penalties ------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def recon_metric(space: MixedSpace, predicted, target: SpacePoint) -> float:
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != (space.flat_dim,):
        raise InvalidVector(f"expected vector of length {space.flat_dim}, got shape {predicted.shape}")
    loss, _ = recon_loss_packed(space, predicted[None, :], pack(space, [target]))
    return float(loss[0])


def recon_loss_packed(space: MixedSpace, predicted: np.ndarray, target: np.ndarray):
    """Per-row reconstruction loss and its gradient w.r.t. ``predicted``.

    Continuous dims contribute the plain squared difference; each discrete
    block contributes softmax cross-entropy against the target category.
    Returns ``(loss (n,), grad (n, flat_dim))``.
    """
    nc = space.n_continuous
    n = predicted.shape[0]
    grad = np.zeros_like(predicted)
    diff = predicted[:, :nc] - target[:, :nc]
    loss = np.sum(diff * diff, axis=1)
    grad[:, :nc] = 2.0 * diff
    rows = np.arange(n)
    for j, sl in enumerate(space.block_slices()):
        logp = _log_softmax(predicted[:, sl])
        labels = target[:, nc + j].astype(int)
        loss = loss - logp[rows, labels]
        g = np.exp(logp)
        g[rows, labels] -= 1.0
        grad[:, sl] = g
    return loss, grad


def hinge_to_box(z, n: int | None = None) -> float:
    z = np.asarray(z, dtype=float)
    if n is not None and z.shape[-1] != n:
        raise InvalidVector(f"expected length {n}, got {z.shape[-1]}")
    return float(np.sum(np.maximum(0.0, np.abs(z) - 1.0)))


def hinge_box_packed(z: np.ndarray):
    """Per-row unit-box hinge and its (sub)gradient."""
    excess = np.abs(z) - 1.0
    active = excess > 0
    return np.sum(np.where(active, excess, 0.0), axis=1), np.where(active, np.sign(z), 0.0)


def hinge_to_space(space: MixedSpace, vector) -> float:
    v = np.asarray(vector, dtype=float)
    if v.shape != (space.flat_dim,):
        raise InvalidVector(f"expected vector of length {space.flat_dim}, got shape {v.shape}")
    return float(hinge_space_packed(space, v[None, :])[0][0])


def hinge_space_packed(space: MixedSpace, flat: np.ndarray):
    """Per-row distance-to-bounds penalty on continuous dims; logits contribute 0."""
    nc = space.n_continuous
    grad = np.zeros_like(flat)
    if not nc:
        return np.zeros(flat.shape[0]), grad
    v = flat[:, :nc]
    over = np.maximum(0.0, v - space.upper)
    under = np.maximum(0.0, space.lower - v)
    grad[:, :nc] = (over > 0).astype(float) - (under > 0).astype(float)
    return np.sum(over + under, axis=1), grad
