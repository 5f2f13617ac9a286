"""Learned obfuscation of a mixed space into the latent box ``[-1, 1]^n``.

An encoder/decoder pair is trained on online samples to minimise

    E_y[ d(f(g(y)), y) + w * Hinge(g(y), Z) ] + w * E_z[ Hinge(f(z), X) ]

with ``y`` uniform on the space, ``z`` uniform on the box and ``w`` the
hinge weight. The encoder ends in tanh, so encoded points are inside the box
by construction; decoding clamps continuous dims and takes the argmax of each
logit block, so decoded points are always valid.

Both networks see continuous dims rescaled to ``[-1, 1]`` through a fixed
affine map derived from the space bounds.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dense import DenseNetwork, OptimizerState, backward, forward, init_network, optimizer_step
from .errors import (
    DimensionTooSmall,
    FormatError,
    InvalidLatent,
    ModelFormatError,
    TrainingDiverged,
    UnsupportedVersion,
)
from .spaces import (
    MixedSpace,
    SpacePoint,
    check_packed,
    flatten_packed,
    hinge_box_packed,
    hinge_space_packed,
    pack,
    recon_loss_packed,
    sample_packed,
    unflatten_packed,
    unpack,
)

MODEL_FORMAT_VERSION = 1


@dataclass
class ObfuscationTrainConfig:
    steps: int = 20000
    batch_size: int = 64
    hinge_weight: float = 1.0
    z_sample_batch: int | None = None  # defaults to batch_size
    learning_rate: float = 3e-3
    # cosine decay from learning_rate down to learning_rate * final_lr_fraction
    final_lr_fraction: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_sizes: tuple[int, ...] = (64, 64)
    eval_samples: int = 4096

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.hinge_weight < 0:
            raise ValueError("hinge_weight must be nonnegative")
        if self.z_sample_batch is not None and self.z_sample_batch < 1:
            raise ValueError("z_sample_batch must be >= 1")
        self.hidden_sizes = tuple(self.hidden_sizes)

    @property
    def z_batch(self) -> int:
        return self.z_sample_batch or self.batch_size

    def lr_at(self, step: int) -> float:
        frac = self.final_lr_fraction
        return self.learning_rate * (frac + (1 - frac) * 0.5 * (1 + np.cos(np.pi * step / self.steps)))


def check_latent_dim(space: MixedSpace, z_dim: int) -> None:
    if z_dim < space.affine_dim:
        raise DimensionTooSmall(
            f"z_dim {z_dim} is below the {space.affine_dim} dimensions spanned by flattened points"
        )


@dataclass(eq=False)
class ObfuscationModel:
    space: MixedSpace
    z_dim: int
    encoder: DenseNetwork
    decoder: DenseNetwork
    training_seed: int
    final_loss: float = float("nan")
    trained: bool = False
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def __post_init__(self):
        check_latent_dim(self.space, self.z_dim)
        if self.encoder.layer_sizes[0] != self.space.flat_dim or self.encoder.n_outputs != self.z_dim:
            raise ValueError("encoder shape does not match space and z_dim")
        if self.decoder.n_inputs != self.z_dim or self.decoder.n_outputs != self.space.flat_dim:
            raise ValueError("decoder shape does not match space and z_dim")

    @classmethod
    def untrained(cls, space: MixedSpace, z_dim: int, seed: int = 0, hidden_sizes=(64, 64)) -> "ObfuscationModel":
        check_latent_dim(space, z_dim)
        enc = init_network([space.flat_dim, *hidden_sizes, z_dim], [seed, 0], "tanh")
        dec = init_network([z_dim, *hidden_sizes, space.flat_dim], [seed, 1])
        return cls(space, z_dim, enc, dec, seed)

    # affine normalisation of continuous dims, fixed by the space bounds
    @property
    def _mid(self):
        return (self.space.lower + self.space.upper) / 2

    @property
    def _half(self):
        return (self.space.upper - self.space.lower) / 2

    def encoder_input(self, packed: np.ndarray) -> np.ndarray:
        x = flatten_packed(self.space, packed)
        nc = self.space.n_continuous
        x[:, :nc] = (x[:, :nc] - self._mid) / self._half
        return x

    def decoder_output(self, raw: np.ndarray) -> np.ndarray:
        out = np.array(raw, dtype=float, copy=True)
        nc = self.space.n_continuous
        out[:, :nc] = self._mid + self._half * out[:, :nc]
        return out

    def transform(self, X) -> np.ndarray:
        """Encode packed points to latent vectors."""
        packed = check_packed(self.space, X)
        return forward(self.encoder, self.encoder_input(packed))[0]

    def decode_flat(self, Z) -> np.ndarray:
        """Decoder output in space units before clamping/argmax."""
        Z = _check_latent(Z, self.z_dim)
        return self.decoder_output(forward(self.decoder, Z)[0])

    def inverse_transform(self, Z) -> np.ndarray:
        """Decode latent vectors to valid packed points."""
        return unflatten_packed(self.space, self.decode_flat(Z))

    def encode(self, point: SpacePoint) -> np.ndarray:
        return self.transform(pack(self.space, [point]))[0]

    def decode(self, z) -> SpacePoint:
        return unpack(self.space, self.inverse_transform(np.asarray(z, dtype=float)[None, :]))[0]

    def to_document(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "space": self.space.to_document(),
            "z_dim": self.z_dim,
            "training_seed": self.training_seed,
            "final_loss": self.final_loss,
            "trained": self.trained,
            "encoder": self.encoder.to_document(),
            "decoder": self.decoder.to_document(),
        }

    @classmethod
    def from_document(cls, doc) -> "ObfuscationModel":
        if not isinstance(doc, dict) or "version" not in doc:
            raise ModelFormatError("model document lacks a version tag")
        if doc["version"] != MODEL_FORMAT_VERSION:
            raise UnsupportedVersion(f"model document version {doc['version']!r}")
        try:
            return cls(
                MixedSpace.from_document(doc["space"]),
                int(doc["z_dim"]),
                DenseNetwork.from_document(doc["encoder"]),
                DenseNetwork.from_document(doc["decoder"]),
                int(doc["training_seed"]),
                float(doc["final_loss"]),
                bool(doc.get("trained", True)),
            )
        except UnsupportedVersion:
            raise
        except (KeyError, TypeError, ValueError, FormatError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from exc


def _check_latent(Z, z_dim: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != z_dim:
        raise InvalidLatent(f"expected latent vectors of length {z_dim}, got shape {Z.shape}")
    if not np.all(np.abs(Z) <= 1.0):
        raise InvalidLatent("latent coordinates must lie in [-1, 1]")
    return Z


def save_model(model: ObfuscationModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_document()) + "\n")


def load_model(path) -> ObfuscationModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    return ObfuscationModel.from_document(doc)


# -- loss -------------------------------------------------------------------

def lx_loss_and_grads(model: ObfuscationModel, y_packed: np.ndarray, z: np.ndarray, hinge_weight: float = 1.0):
    """Batch estimate of the obfuscation loss with encoder/decoder gradients.

    Returns ``(loss, encoder_grads, decoder_grads, terms)`` where ``terms``
    holds the three batch means ``(reconstruction, encoder hinge, decoder
    hinge)`` before weighting.
    """
    enc, dec, space = model.encoder, model.decoder, model.space
    nc = space.n_continuous
    n, m = len(y_packed), len(z)
    g, enc_cache = forward(enc, model.encoder_input(y_packed))
    # one decoder pass over encoded points and latent samples together
    raw, dec_cache = forward(dec, np.vstack([g, z]))
    out = model.decoder_output(raw)
    rec_loss, d_rec = recon_loss_packed(space, out[:n], y_packed)
    dec_hinge, d_dec_hinge = hinge_space_packed(space, out[n:])
    enc_hinge, d_enc_hinge = hinge_box_packed(g)
    d_out = np.vstack([d_rec / n, hinge_weight * d_dec_hinge / m])
    d_out[:, :nc] *= model._half
    dec_grads, d_in = backward(dec, dec_cache, d_out)
    enc_grads, _ = backward(enc, enc_cache, d_in[:n] + hinge_weight * d_enc_hinge / n)
    terms = (float(rec_loss.mean()), float(enc_hinge.mean()), float(dec_hinge.mean()))
    loss = terms[0] + hinge_weight * (terms[1] + terms[2])
    return loss, enc_grads, dec_grads, terms


def loss_lx(model: ObfuscationModel, batch_y, batch_z, hinge_weight: float = 1.0) -> float:
    """Obfuscation loss on given batches; ``batch_y`` is packed or a list of points."""
    if len(batch_y) == 0 or len(batch_z) == 0:
        raise ValueError("batches must be non-empty")
    if isinstance(batch_y[0], SpacePoint):
        y = pack(model.space, batch_y)
    else:
        y = check_packed(model.space, batch_y)
    z = np.asarray(batch_z, dtype=float).reshape(len(batch_z), -1)
    if z.shape[1] != model.z_dim:
        raise InvalidLatent(f"latent samples must have length {model.z_dim}")
    return lx_loss_and_grads(model, y, z, hinge_weight)[0]


# -- training ---------------------------------------------------------------

def train_obfuscation(space: MixedSpace, z_dim: int, config: ObfuscationTrainConfig | None = None,
                      seed: int = 0) -> ObfuscationModel:
    config = config or ObfuscationTrainConfig()
    check_latent_dim(space, z_dim)
    model = ObfuscationModel.untrained(space, z_dim, seed, config.hidden_sizes)
    rng = np.random.default_rng([seed, 2])
    hyper = dict(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    enc_state = OptimizerState.for_network(model.encoder, **hyper)
    dec_state = OptimizerState.for_network(model.decoder, **hyper)
    history = np.empty(config.steps)
    for t in range(config.steps):
        enc_state.lr = dec_state.lr = config.lr_at(t)
        y = sample_packed(space, rng, config.batch_size)
        z = rng.uniform(-1.0, 1.0, size=(config.z_batch, z_dim))
        loss, ge, gd, _ = lx_loss_and_grads(model, y, z, config.hinge_weight)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {t}")
        optimizer_step(model.encoder, ge, enc_state)
        optimizer_step(model.decoder, gd, dec_state)
        history[t] = loss
        if t % 100 == 0:
            _check_finite(model, t)
    _check_finite(model, config.steps)
    y = sample_packed(space, rng, config.eval_samples)
    z = rng.uniform(-1.0, 1.0, size=(config.eval_samples, z_dim))
    model.final_loss = lx_loss_and_grads(model, y, z, config.hinge_weight)[0]
    model.trained = True
    model.loss_history = history
    return model


def _check_finite(model: ObfuscationModel, step: int) -> None:
    for net in (model.encoder, model.decoder):
        if not all(np.all(np.isfinite(p)) for p in net.parameters()):
            raise TrainingDiverged(f"non-finite parameters at step {step}")


# -- diagnostics ------------------------------------------------------------

@dataclass
class CoverageReport:
    covered: int
    total: int
    missing: list[tuple[int, ...]]

    @property
    def fraction(self) -> float:
        return self.covered / self.total


def coverage_check(model: ObfuscationModel, trials: int = 1, seed: int = 0) -> CoverageReport:
    """For each discrete combination, does some encoded sample decode back to it?"""
    space = model.space
    rng = np.random.default_rng(seed)
    combos = list(itertools.product(*(range(c) for c in space.discrete)))
    covered, missing = 0, []
    for combo in combos:
        y = sample_packed(space, rng, trials)
        y[:, space.n_continuous :] = combo
        back = model.inverse_transform(np.clip(model.transform(y), -1.0, 1.0))
        if np.any(np.all(back[:, space.n_continuous :] == combo, axis=1)):
            covered += 1
        else:
            missing.append(tuple(combo))
    return CoverageReport(covered, len(combos), missing)


@dataclass
class RoundTripReport:
    n: int
    discrete_accuracy: float  # fraction of points with every discrete part recovered
    point_accuracy: float  # discrete exact and every continuous dim within tolerance
    mean_continuous_error: float
    encoded_in_box: float
    decoded_valid: float
    mean_preclamp_hinge: float


def round_trip_report(model: ObfuscationModel, n: int = 10000, seed: int = 0, tolerance: float = 0.05) -> RoundTripReport:
    space = model.space
    rng = np.random.default_rng(seed)
    y = sample_packed(space, rng, n)
    z_enc = model.transform(y)
    in_box = np.all(np.abs(z_enc) <= 1.0, axis=1)
    back = model.inverse_transform(np.clip(z_enc, -1.0, 1.0))
    nc = space.n_continuous
    disc_ok = np.all(back[:, nc:] == y[:, nc:], axis=1)
    err = np.abs(back[:, :nc] - y[:, :nc])
    cont_ok = np.all(err <= tolerance, axis=1)
    z = rng.uniform(-1.0, 1.0, size=(n, model.z_dim))
    flat = model.decode_flat(z)
    decoded = model.inverse_transform(z)
    valid = np.array([space.contains(p) for p in unpack(space, decoded)])
    hinge = hinge_space_packed(space, flat)[0]
    return RoundTripReport(
        n,
        float(disc_ok.mean()),
        float(np.mean(disc_ok & cont_ok)),
        float(err.mean()) if nc else 0.0,
        float(in_box.mean()),
        float(valid.mean()),
        float(hinge.mean()),
    )


class SpaceObfuscator(TransformerMixin, BaseEstimator):
    """Estimator facade: ``fit`` trains on the space itself, ``X`` is ignored.

    ``transform`` maps packed points to latent vectors and
    ``inverse_transform`` maps latent vectors back to valid packed points.
    """

    def __init__(self, space: MixedSpace | None = None, z_dim: int = 16, steps: int = 20000, batch_size: int = 64,
                 hinge_weight: float = 1.0, learning_rate: float = 3e-3, hidden_sizes=(64, 64),
                 random_state: int = 0):
        self.space = space
        self.z_dim = z_dim
        self.steps = steps
        self.batch_size = batch_size
        self.hinge_weight = hinge_weight
        self.learning_rate = learning_rate
        self.hidden_sizes = hidden_sizes
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.space is None:
            raise ValueError("SpaceObfuscator needs a space")
        config = ObfuscationTrainConfig(
            steps=self.steps, batch_size=self.batch_size, hinge_weight=self.hinge_weight,
            learning_rate=self.learning_rate, hidden_sizes=self.hidden_sizes,
        )
        self.model_ = train_obfuscation(self.space, self.z_dim, config, self.random_state)
        self.final_loss_ = self.model_.final_loss
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.transform(X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return self.model_.inverse_transform(Z)
