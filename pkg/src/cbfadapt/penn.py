"""Probabilistic ensemble of small Gaussian-output MLPs.

Each member maps normalized features to a mean and a log-variance per target
and is trained on the Gaussian negative log-likelihood over its own bootstrap
resample. The ensemble splits predictive variance into

    aleatoric = mean over members of exp(log_var)
    epistemic = population variance over members of the means

so that their sum is the variance of the equally weighted Gaussian mixture.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ModelFormatError, TrainingError
from .validator import Dataset

log = logging.getLogger(__name__)

FORMAT_NAME = "cbfadapt-penn"
FORMAT_VERSION = 1
LOGVAR_MIN, LOGVAR_MAX = -10.0, 4.0


@dataclass
class MlpMember:
    """Dense tanh network: F -> hidden... -> 2 * n_targets (means, log-variances)."""

    weights: list
    biases: list

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_targets(self) -> int:
        return self.weights[-1].shape[1] // 2

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng: np.random.Generator) -> "MlpMember":
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "MlpMember":
        return cls(
            [np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])],
            [np.zeros(b) for b in layer_sizes[1:]],
        )

    def params(self) -> list:
        return self.weights + self.biases

    def copy(self) -> "MlpMember":
        return MlpMember([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _forward_cache(member: MlpMember, X: np.ndarray):
    acts = [X]
    h = X
    for W, b in zip(member.weights[:-1], member.biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    out = h @ member.weights[-1] + member.biases[-1]
    return out, acts


def forward(member: MlpMember, features) -> tuple[np.ndarray, np.ndarray]:
    """Return (means, clamped log-variances) for one feature vector or a batch."""
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != member.weights[0].shape[0]:
        raise DimensionError(f"expected {member.weights[0].shape[0]} features, got {X.shape[1]}")
    out, _ = _forward_cache(member, X)
    t = member.n_targets
    means, log_vars = out[:, :t], np.clip(out[:, t:], LOGVAR_MIN, LOGVAR_MAX)
    if single:
        return means[0], log_vars[0]
    return means, log_vars


def nll_loss(means, log_vars, targets) -> float:
    """Gaussian NLL summed over targets (constant dropped), averaged over rows."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    log_vars = np.atleast_2d(np.asarray(log_vars, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    per_row = 0.5 * np.sum(log_vars + (targets - means) ** 2 * np.exp(-log_vars), axis=1)
    return float(np.mean(per_row))


def loss_and_grads(member: MlpMember, X: np.ndarray, Y: np.ndarray) -> tuple[float, list]:
    """Mean NLL over the batch and its gradients, ordered like ``member.params()``."""
    out, acts = _forward_cache(member, X)
    t = member.n_targets
    B = X.shape[0]
    mu, raw_lv = out[:, :t], out[:, t:]
    lv = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
    inv_var = np.exp(-lv)
    resid = Y - mu
    loss = 0.5 * float(np.sum(lv + resid**2 * inv_var)) / B

    d_out = np.empty_like(out)
    d_out[:, :t] = -resid * inv_var / B
    inside = (raw_lv >= LOGVAR_MIN) & (raw_lv <= LOGVAR_MAX)
    d_out[:, t:] = 0.5 * (1.0 - resid**2 * inv_var) / B * inside

    n_layers = len(member.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = d_out
    for layer in range(n_layers - 1, -1, -1):
        a_in = acts[layer]
        gw[layer] = a_in.T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ member.weights[layer].T) * (1.0 - a_in**2)
    return loss, gw + gb


@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    members: int = 5
    hidden: tuple = (64, 64)
    seed: int = 0
    grad_clip: float = 10.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EnsemblePrediction:
    """Per-target moments; arrays are (n_targets,) or (rows, n_targets)."""

    mean: np.ndarray
    aleatoric_var: np.ndarray
    epistemic_var: np.ndarray

    @property
    def total_var(self) -> np.ndarray:
        return self.aleatoric_var + self.epistemic_var

    # target 0 is the safety label, target 1 the progress label
    @property
    def mean_safety(self):
        return self.mean[..., 0]

    @property
    def mean_progress(self):
        return self.mean[..., 1]

    @property
    def epistemic_safety(self):
        return self.epistemic_var[..., 0]

    @property
    def total_safety(self):
        return self.total_var[..., 0]

    def row(self, i: int) -> "EnsemblePrediction":
        return EnsemblePrediction(self.mean[i], self.aleatoric_var[i], self.epistemic_var[i])


@dataclass
class EnsembleModel:
    members: list
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    config: dict = field(default_factory=dict)
    history: Optional[list] = None

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")
        sizes = self.members[0].layer_sizes
        if any(m.layer_sizes != sizes for m in self.members):
            raise ValueError("ensemble members must share layer sizes")

    @property
    def n_features(self) -> int:
        return self.members[0].layer_sizes[0]


def _normalize(model: EnsembleModel, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got {X.shape[1]}")
    return (X - model.feature_mean) / model.feature_std


def predict(model: EnsembleModel, features) -> EnsemblePrediction:
    """Ensemble moments in label units from raw (unnormalized) features."""
    single = np.asarray(features).ndim == 1
    Xn = _normalize(model, features)
    means, variances = [], []
    for member in model.members:
        mu, lv = forward(member, Xn)
        means.append(model.target_mean + model.target_std * mu)
        variances.append(model.target_std**2 * np.exp(lv))
    means = np.stack(means)
    variances = np.stack(variances)
    pred = EnsemblePrediction(means.mean(axis=0), variances.mean(axis=0), means.var(axis=0))
    return pred.row(0) if single else pred


def mixture_moments(member_means: np.ndarray, member_vars: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the equal-weight Gaussian mixture, straight from its definition."""
    mean = member_means.mean(axis=0)
    second = (member_vars + member_means**2).mean(axis=0)
    return mean, second - mean**2


def _train_member(
    member: MlpMember, X: np.ndarray, Y: np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> list:
    velocity = [np.zeros_like(p) for p in member.params()]
    params = member.params()
    n = X.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            loss, grads = loss_and_grads(member, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}: {loss}")
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            scale = cfg.grad_clip / norm if norm > cfg.grad_clip else 1.0
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * scale * g
                p += v
            total += loss * idx.size
        history.append(total / n)
    return history


def train(dataset: Dataset, config: TrainConfig | None = None, **overrides) -> EnsembleModel:
    """Fit an ensemble; every member sees its own bootstrap resample and initialization."""
    cfg = config or TrainConfig()
    if overrides:
        cfg = TrainConfig(**{**asdict(cfg), **overrides})
    if len(dataset) < 10:
        raise TrainingError(f"dataset has {len(dataset)} rows; at least 10 are required")
    if cfg.members < 2:
        raise TrainingError("an ensemble needs at least two members")

    Xn = (dataset.features - dataset.feature_mean) / dataset.feature_std
    y_mean = dataset.targets.mean(axis=0)
    y_std = dataset.targets.std(axis=0)
    y_std[y_std < 1e-12] = 1.0
    Yn = (dataset.targets - y_mean) / y_std
    sizes = [dataset.n_features, *cfg.hidden, 2 * dataset.targets.shape[1]]

    members, history = [], []
    for j in range(cfg.members):
        rng = np.random.default_rng([cfg.seed, j])
        member = MlpMember.init(sizes, rng)
        boot = rng.integers(0, len(dataset), size=len(dataset))
        history.append(_train_member(member, Xn[boot], Yn[boot], cfg, rng))
        log.debug("member %d final nll %.4f", j, history[-1][-1])
        members.append(member)
    return EnsembleModel(
        members,
        dataset.feature_mean.copy(),
        dataset.feature_std.copy(),
        y_mean,
        y_std,
        config=cfg.to_dict(),
        history=history,
    )


def mean_nll(model: EnsembleModel, dataset: Dataset) -> float:
    """Average member NLL on the dataset in normalized label units."""
    Xn = (dataset.features - model.feature_mean) / model.feature_std
    Yn = (dataset.targets - model.target_mean) / model.target_std
    return float(np.mean([nll_loss(*forward(m, Xn), Yn) for m in model.members]))


def save(model: EnsembleModel, path) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_sizes": model.members[0].layer_sizes,
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "target_mean": np.asarray(model.target_mean).tolist(),
        "target_std": np.asarray(model.target_std).tolist(),
        "config": model.config,
        "members": [
            {"weights": [w.ravel().tolist() for w in m.weights], "biases": [b.tolist() for b in m.biases]}
            for m in model.members
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc) + "\n")


def load(path) -> EnsembleModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"{path}: missing or wrong format tag, expected {FORMAT_NAME!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: version {doc.get('version')!r}, expected version {FORMAT_VERSION}")
    try:
        sizes = [int(s) for s in doc["layer_sizes"]]
        members = []
        for m in doc["members"]:
            weights = [
                np.asarray(w, dtype=float).reshape(a, b) for w, a, b in zip(m["weights"], sizes[:-1], sizes[1:])
            ]
            biases = [np.asarray(b, dtype=float).reshape(n) for b, n in zip(m["biases"], sizes[1:])]
            if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
                raise ValueError("layer count does not match layer_sizes")
            members.append(MlpMember(weights, biases))
        return EnsembleModel(
            members,
            np.asarray(doc["feature_mean"], dtype=float),
            np.asarray(doc["feature_std"], dtype=float),
            np.asarray(doc["target_mean"], dtype=float),
            np.asarray(doc["target_std"], dtype=float),
            config=doc.get("config", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from None
