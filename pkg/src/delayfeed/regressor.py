"""Self-contained online Poisson regressor.

Categorical tokens are feature-hashed into per-field embedding tables,
concatenated with log1p-transformed numeric features, passed through fully
connected ReLU layers, and mapped to a rate via an exponential output link.
Training is strictly one example at a time with per-parameter AdaGrad.
In two-output mode the network emits (rate_plus, rate_minus) and the signed
prediction is their difference, which is how negative labels from
retractions are handled.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

from .core import ContractViolation, poisson_nll

CHECKPOINT_MAGIC = b"DLYFEED1"


@dataclass(frozen=True)
class RegressorConfig:
    categorical_fields: tuple = ()
    numeric_features: tuple = ()
    embedding_dim: int = 8
    hash_buckets_per_field: int = 4096
    hidden_layer_sizes: tuple = (32, 32)
    learning_rate: float = 0.05
    adagrad_epsilon: float = 1e-6
    output_bias_init: float = math.log(0.5)
    two_output_mode: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "categorical_fields", tuple(self.categorical_fields))
        object.__setattr__(self, "numeric_features", tuple(self.numeric_features))
        object.__setattr__(self, "hidden_layer_sizes", tuple(self.hidden_layer_sizes))
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.hash_buckets_per_field < 2:
            raise ValueError("hash_buckets_per_field must be >= 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.adagrad_epsilon <= 0:
            raise ValueError("adagrad_epsilon must be > 0")


@dataclass
class FeatureVector:
    """Categorical (field_id, token) pairs plus named numeric features.
    Fields must come from the regressor's declared schema; a declared field
    absent from the input contributes a zero embedding."""

    categorical: list
    numeric: list = field(default_factory=list)


@lru_cache(maxsize=65536)
def hash_token(field_id: str, token: str, buckets: int) -> int:
    """Stable 64-bit hash of field_id + token, reduced to a bucket index.
    Stable across processes and runs (unlike builtin hash)."""
    digest = hashlib.blake2b(
        f"{field_id}\x1f{token}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % buckets


def adagrad_update(param, accum, grad, lr: float, eps: float):
    """In-place AdaGrad step: accum += grad^2; param -= lr * grad / (sqrt(accum) + eps)."""
    accum += grad * grad
    param -= lr * grad / (np.sqrt(accum) + eps)


class PoissonRegressor:
    """Hashed-embedding MLP with exponential output link and AdaGrad state.

    Single-writer during training; read-only inference between training
    steps is safe from any thread.
    """

    def __init__(self, config: RegressorConfig):
        self.config = config
        self.forward_calls = 0
        rng = np.random.default_rng(config.rng_seed)

        d = config.embedding_dim
        self.embeddings = {}
        self.embedding_g2 = {}
        for f in config.categorical_fields:
            self.embeddings[f] = rng.uniform(
                -0.05, 0.05, size=(config.hash_buckets_per_field, d)
            )
            self.embedding_g2[f] = np.zeros(
                (config.hash_buckets_per_field, d)
            )

        self.input_dim = d * len(config.categorical_fields) + len(
            config.numeric_features
        )
        self.n_outputs = 2 if config.two_output_mode else 1

        sizes = [self.input_dim, *config.hidden_layer_sizes, self.n_outputs]
        self.weights = []
        self.biases = []
        self.weight_g2 = []
        self.bias_g2 = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
            self.weight_g2.append(np.zeros((fan_in, fan_out)))
            self.bias_g2.append(np.zeros(fan_out))
        self.biases[-1][:] = config.output_bias_init

        self._numeric_index = {
            name: i for i, name in enumerate(config.numeric_features)
        }
        self._field_offset = {
            f: i * d for i, f in enumerate(config.categorical_fields)
        }

    # -- forward ---------------------------------------------------------

    def _assemble_input(self, features: FeatureVector):
        """Returns (input vector, list of (field, row) embedding lookups)."""
        cfg = self.config
        x = np.zeros(self.input_dim)
        lookups = []
        d = cfg.embedding_dim
        for field_id, token in features.categorical:
            off = self._field_offset.get(field_id)
            if off is None:
                raise ContractViolation(
                    f"unknown categorical field {field_id!r}; declared fields: "
                    f"{cfg.categorical_fields}"
                )
            row = hash_token(field_id, token, cfg.hash_buckets_per_field)
            x[off : off + d] += self.embeddings[field_id][row]
            lookups.append((field_id, row, off))
        base = d * len(cfg.categorical_fields)
        for name, value in features.numeric:
            idx = self._numeric_index.get(name)
            if idx is None:
                raise ContractViolation(
                    f"unknown numeric feature {name!r}; declared: "
                    f"{cfg.numeric_features}"
                )
            # log1p scaling for heavy-tailed count-like inputs
            x[base + idx] = math.copysign(math.log1p(abs(value)), value)
        return x, lookups

    def _forward_cached(self, features: FeatureVector):
        x, lookups = self._assemble_input(features)
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                z = np.maximum(z, 0.0)
            h = z
            activations.append(h)
        # stability clamp on the log-rate; exp would overflow/underflow far
        # outside this range and AdaGrad recovers from the clipped gradient
        rates = np.exp(np.clip(h, -30.0, 30.0))
        return rates, activations, lookups

    def forward(self, features: FeatureVector):
        """Rate (single output) or (rate_plus, rate_minus) in two-output mode."""
        self.forward_calls += 1
        rates, _, _ = self._forward_cached(features)
        if self.n_outputs == 1:
            return float(rates[0])
        return float(rates[0]), float(rates[1])

    def predict(self, features: FeatureVector) -> float:
        """Scalar prediction: the rate, or rate_plus - rate_minus."""
        out = self.forward(features)
        if self.n_outputs == 1:
            return out
        return out[0] - out[1]

    # -- training --------------------------------------------------------

    def _label_array(self, label):
        if self.n_outputs == 1:
            if not isinstance(label, (int, float)):
                raise ContractViolation(
                    "single-output mode takes a scalar label"
                )
            if label < 0:
                raise ContractViolation(
                    f"label must be >= 0 in single-output mode, got {label}"
                )
            return np.array([float(label)])
        pos, neg = label
        if pos < 0 or neg < 0:
            raise ContractViolation(
                f"two-output labels must both be >= 0, got ({pos}, {neg})"
            )
        return np.array([float(pos), float(neg)])

    def _backward(self, rates, activations, lookups, y):
        """Gradients of the summed Poisson NLL over outputs. Returns
        (weight grads, bias grads, input grad)."""
        grad = rates - y  # dL/ds for the exp link
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = activations[i]
            w_grads[i] = np.outer(h_in, grad)
            b_grads[i] = grad
            grad = self.weights[i] @ grad
            if i > 0:
                grad = grad * (activations[i] > 0.0)
        return w_grads, b_grads, grad

    def gradients(self, features: FeatureVector, label):
        """Analytic gradients without updating: (loss, weight grads,
        bias grads, embedding grads as {(field, row): vector})."""
        y = self._label_array(label)
        rates, activations, lookups = self._forward_cached(features)
        loss = float(np.sum(rates - y * np.log(rates)))
        w_grads, b_grads, x_grad = self._backward(rates, activations, lookups, y)
        d = self.config.embedding_dim
        emb_grads = {}
        for field_id, row, off in lookups:
            g = x_grad[off : off + d]
            key = (field_id, row)
            if key in emb_grads:
                emb_grads[key] = emb_grads[key] + g
            else:
                emb_grads[key] = g.copy()
        return loss, w_grads, b_grads, emb_grads

    def train_step(self, features: FeatureVector, label) -> float:
        """One online AdaGrad step; returns the pre-update loss. Only
        embedding rows actually touched by the input are updated."""
        y = self._label_array(label)
        rates, activations, lookups = self._forward_cached(features)
        loss = float(np.sum(rates - y * np.log(rates)))
        w_grads, b_grads, x_grad = self._backward(rates, activations, lookups, y)

        if not math.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss {loss} at output layer (rates={rates})"
            )

        lr = self.config.learning_rate
        eps = self.config.adagrad_epsilon
        for i, (wg, bg) in enumerate(zip(w_grads, b_grads)):
            if not np.all(np.isfinite(wg)) or not np.all(np.isfinite(bg)):
                raise FloatingPointError(
                    f"non-finite gradient in dense layer {i}"
                )
            adagrad_update(self.weights[i], self.weight_g2[i], wg, lr, eps)
            adagrad_update(self.biases[i], self.bias_g2[i], bg, lr, eps)

        d = self.config.embedding_dim
        seen = {}
        for field_id, row, off in lookups:
            g = x_grad[off : off + d]
            key = (field_id, row)
            if key in seen:
                seen[key] = seen[key] + g
            else:
                seen[key] = g
        for (field_id, row), g in seen.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in embedding field {field_id!r}"
                )
            table = self.embeddings[field_id]
            g2 = self.embedding_g2[field_id]
            g2[row] += g * g
            table[row] -= lr * g / (np.sqrt(g2[row]) + eps)
        return loss

    # -- checkpointing ----------------------------------------------------

    def _param_arrays(self):
        """All parameter and accumulator arrays in declaration order."""
        arrays = []
        for f in self.config.categorical_fields:
            arrays.append(self.embeddings[f])
        arrays.extend(self.weights)
        arrays.extend(self.biases)
        for f in self.config.categorical_fields:
            arrays.append(self.embedding_g2[f])
        arrays.extend(self.weight_g2)
        arrays.extend(self.bias_g2)
        return arrays

    def save(self, path):
        cfg_json = json.dumps(asdict(self.config), sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(cfg_json)))
            fh.write(cfg_json)
            for arr in self._param_arrays():
                fh.write(np.asarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "PoissonRegressor":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"bad checkpoint magic {magic!r}")
            (cfg_len,) = struct.unpack("<I", fh.read(4))
            cfg = json.loads(fh.read(cfg_len).decode("utf-8"))
            model = cls(RegressorConfig(**cfg))
            for arr in model._param_arrays():
                raw = fh.read(arr.size * 4)
                arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape)
        return model
