"""Binary prompt gate: a small MLP over prompt embeddings.

Architecture: linear -> ReLU -> dropout (training only) -> layer norm ->
linear -> softmax over {retain, forget}. The loss is cross-entropy with
inverse-frequency class weights w_c = N / (2 * N_c), which makes the
objective invariant to duplicating the dataset and insensitive to class
imbalance. Training is full-batch gradient descent with a fixed seed, so
identical inputs give bit-identical parameters.

Class index 1 is forget (the positive class), 0 is retain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInput, Split

_LN_EPS = 1e-5


@dataclass
class ClassifierConfig:
    hidden_dim: int = 128
    learning_rate: float = 1e-3
    epochs: int = 200
    decision_threshold: float = 0.5
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim < 1:
            raise InvalidInput("hidden_dim must be positive")
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidInput("epochs must be positive")
        if not (0.0 < self.decision_threshold < 1.0):
            raise InvalidInput("decision_threshold must be in (0, 1)")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise InvalidInput("dropout_rate must be in [0, 1)")


@dataclass
class MlpParameters:
    hidden_weight: np.ndarray  # (hidden, input)
    hidden_bias: np.ndarray  # (hidden,)
    ln_gain: np.ndarray  # (hidden,)
    ln_bias: np.ndarray  # (hidden,)
    output_weight: np.ndarray  # (2, hidden)
    output_bias: np.ndarray  # (2,)
    dropout_rate: float = 0.1

    @property
    def input_dim(self) -> int:
        return self.hidden_weight.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.hidden_weight.shape[0]

    def __post_init__(self) -> None:
        if not (0.0 <= self.dropout_rate < 1.0):
            raise InvalidInput("dropout_rate must be in [0, 1)")
        for name in ("hidden_weight", "hidden_bias", "ln_gain", "ln_bias",
                     "output_weight", "output_bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInput(f"{name} must be finite")

    def to_json_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "dropout_rate": self.dropout_rate,
            "hidden_weight": self.hidden_weight.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "ln_gain": self.ln_gain.tolist(),
            "ln_bias": self.ln_bias.tolist(),
            "output_weight": self.output_weight.tolist(),
            "output_bias": self.output_bias.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MlpParameters":
        try:
            params = cls(
                hidden_weight=np.asarray(obj["hidden_weight"], dtype=np.float64),
                hidden_bias=np.asarray(obj["hidden_bias"], dtype=np.float64),
                ln_gain=np.asarray(obj["ln_gain"], dtype=np.float64),
                ln_bias=np.asarray(obj["ln_bias"], dtype=np.float64),
                output_weight=np.asarray(obj["output_weight"], dtype=np.float64),
                output_bias=np.asarray(obj["output_bias"], dtype=np.float64),
                dropout_rate=float(obj.get("dropout_rate", 0.1)),
            )
        except KeyError as exc:
            raise InvalidInput(f"parameter JSON missing field {exc}") from exc
        if params.hidden_weight.ndim != 2:
            raise InvalidInput("hidden_weight must be a matrix")
        declared = (obj.get("hidden_dim"), obj.get("input_dim"))
        if declared != (None, None) and declared != params.hidden_weight.shape:
            raise InvalidInput(
                f"declared shape {declared} != stored {params.hidden_weight.shape}"
            )
        if params.output_weight.shape != (2, params.hidden_dim):
            raise InvalidInput("output_weight shape is inconsistent")
        return params


def save_parameters(params: MlpParameters, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.to_json_dict()))


def load_parameters(path: str | Path) -> MlpParameters:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: not valid JSON: {exc}") from exc
    return MlpParameters.from_json_dict(obj)


def _as_matrix(vectors: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInput(f"expected a non-empty (n, d) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("embedding vectors must be finite")
    return X


def _as_labels(labels: Sequence[int] | np.ndarray, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.shape != (n,):
        raise InvalidInput(f"expected {n} labels, got shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInput("labels must be 0 (retain) or 1 (forget)")
    return y


def class_weights(labels: Sequence[int] | np.ndarray) -> np.ndarray:
    """Inverse-frequency weights w_c = N / (2 * N_c) for c in {0, 1}."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    y = _as_labels(y, y.shape[0])
    n = float(len(y))
    counts = np.array([np.sum(y == 0), np.sum(y == 1)], dtype=np.float64)
    if np.any(counts == 0):
        raise InvalidInput("both classes must be present to weight the loss")
    return n / (2.0 * counts)


def _forward_cached(
    params: MlpParameters, X: np.ndarray, dropout_mask: Optional[np.ndarray]
) -> dict:
    a = X @ params.hidden_weight.T + params.hidden_bias
    r = np.maximum(a, 0.0)
    u = r * dropout_mask if dropout_mask is not None else r
    mu = u.mean(axis=1, keepdims=True)
    var = u.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (u - mu) * inv_std
    y_ln = params.ln_gain * xhat + params.ln_bias
    logits = y_ln @ params.output_weight.T + params.output_bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    return {
        "a": a,
        "xhat": xhat,
        "inv_std": inv_std,
        "y_ln": y_ln,
        "logits": logits,
        "probs": probs,
    }


def sample_dropout_mask(params: MlpParameters, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Inverted-dropout mask over hidden units, or None when rate is 0."""
    if params.dropout_rate == 0.0:
        return None
    keep = rng.random(params.hidden_dim) >= params.dropout_rate
    return keep.astype(np.float64) / (1.0 - params.dropout_rate)


def forward(
    params: MlpParameters,
    vector: Sequence[float] | np.ndarray,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Class probabilities (retain, forget) for one embedding vector.

    Training mode draws a dropout mask from `rng`; inference mode never
    drops units.
    """
    X = _as_matrix(vector)
    if X.shape[1] != params.input_dim:
        raise InvalidInput(f"vector dim {X.shape[1]} != parameter dim {params.input_dim}")
    mask = None
    if training and params.dropout_rate > 0.0:
        if rng is None:
            raise InvalidInput("training-mode forward needs an rng for dropout")
        mask = sample_dropout_mask(params, rng)
    return _forward_cached(params, X, mask)["probs"][0]


def loss_and_grads(
    params: MlpParameters,
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    dropout_mask: Optional[np.ndarray] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted cross-entropy and its exact gradients.

    `weights` has one entry per class; sample i contributes
    weights[y_i] * CE_i / N. The grad dict keys mirror the MlpParameters
    array fields.
    """
    X = _as_matrix(X)
    y = _as_labels(y, X.shape[0])
    n = X.shape[0]
    w = np.asarray(weights, dtype=np.float64)[y]  # per-sample
    cache = _forward_cached(params, X, dropout_mask)
    probs = cache["probs"]
    logp = np.log(np.clip(probs[np.arange(n), y], 1e-300, None))
    loss = float(np.mean(w * -logp))

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    dlogits = (probs - onehot) * (w / n)[:, None]
    d_y_ln = dlogits @ params.output_weight
    dxhat = d_y_ln * params.ln_gain
    xhat = cache["xhat"]
    du = cache["inv_std"] * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    dr = du * dropout_mask if dropout_mask is not None else du
    da = dr * (cache["a"] > 0.0)
    grads = {
        "hidden_weight": da.T @ X,
        "hidden_bias": da.sum(axis=0),
        "ln_gain": (d_y_ln * xhat).sum(axis=0),
        "ln_bias": d_y_ln.sum(axis=0),
        "output_weight": dlogits.T @ cache["y_ln"],
        "output_bias": dlogits.sum(axis=0),
    }
    return loss, grads


def train(
    vectors: Sequence[Sequence[float]] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    cfg: ClassifierConfig,
) -> MlpParameters:
    """Full-batch gradient descent from a seeded initialization.

    The dropout mask is redrawn once per epoch and shared across the
    batch, which keeps training deterministic and invariant to
    duplicating the dataset.
    """
    X = _as_matrix(vectors)
    y = _as_labels(labels, X.shape[0])
    weights = class_weights(y)
    d, h = X.shape[1], cfg.hidden_dim
    rng = np.random.default_rng(cfg.seed)
    params = MlpParameters(
        hidden_weight=rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d)),
        hidden_bias=np.zeros(h),
        ln_gain=np.ones(h),
        ln_bias=np.zeros(h),
        output_weight=rng.normal(0.0, 1.0 / np.sqrt(h), size=(2, h)),
        output_bias=np.zeros(2),
        dropout_rate=cfg.dropout_rate,
    )
    for _ in range(cfg.epochs):
        mask = sample_dropout_mask(params, rng)
        _, grads = loss_and_grads(params, X, y, weights, dropout_mask=mask)
        for name, grad in grads.items():
            getattr(params, name)[...] -= cfg.learning_rate * grad
    return params


def classify(
    params: MlpParameters,
    vector: Sequence[float] | np.ndarray,
    threshold: float = 0.5,
) -> Split:
    """Route to FORGET when the forget probability reaches the threshold."""
    if not (0.0 < threshold < 1.0):
        raise InvalidInput("threshold must be in (0, 1)")
    probs = forward(params, vector)
    return Split.FORGET if probs[1] >= threshold else Split.RETAIN


def evaluate_rates(
    params: MlpParameters,
    vectors: Sequence[Sequence[float]] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    threshold: float = 0.5,
) -> tuple[Optional[float], Optional[float]]:
    """(false negative rate, false positive rate) at the given threshold.

    Forget is the positive class: FNR = FN/(FN+TP), FPR = FP/(FP+TN). A
    rate whose class is absent from the data comes back as None.
    """
    X = _as_matrix(vectors)
    y = _as_labels(labels, X.shape[0])
    probs = _forward_cached(params, X, None)["probs"][:, 1]
    predicted = (probs >= threshold).astype(np.int64)
    pos = y == 1
    neg = y == 0
    fnr = float(np.mean(predicted[pos] == 0)) if pos.any() else None
    fpr = float(np.mean(predicted[neg] == 1)) if neg.any() else None
    return fnr, fpr


def load_labeled_jsonl(path: str | Path) -> tuple[list[dict], Optional[np.ndarray], np.ndarray]:
    """Read labeled examples, one JSON object per line.

    Each line needs a "label" (0/1 or "retain"/"forget") and either a
    precomputed "vector" or a "text" to embed later. Returns the raw
    records, the vector matrix when every line carried one (else None),
    and the label array.
    """
    records: list[dict] = []
    labels: list[int] = []
    vectors: list[list[float]] = []
    all_vectors = True
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        label = obj.get("label")
        if label in ("forget", 1, True):
            label = 1
        elif label in ("retain", 0, False):
            label = 0
        else:
            raise InvalidInput(f"{path}:{lineno}: label must be 0/1 or retain/forget")
        if "vector" in obj:
            vectors.append(obj["vector"])
        else:
            all_vectors = False
            if "text" not in obj:
                raise InvalidInput(f"{path}:{lineno}: need a vector or a text field")
        obj["label"] = label
        records.append(obj)
        labels.append(label)
    if not records:
        raise InvalidInput(f"{path}: no labeled examples")
    matrix = _as_matrix(vectors) if all_vectors and vectors else None
    return records, matrix, np.asarray(labels, dtype=np.int64)
