"""Pluggable local objective: synthetic heterogeneous least-squares fleets with
a centralized closed-form oracle, a leakage-safe time-series preprocessing
pipeline for user CSVs, mini-batch SGD epochs, and FLOP estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

# Forward pass ~2 and backward ~4 multiply-adds per weight per sample.
FLOPS_PER_WEIGHT_SAMPLE = 6

_SALT_FLEET = 61
_SALT_EPOCH = 51


@dataclass(frozen=True)
class SyntheticTaskSpec:
    dim: int = 64
    samples_per_node: int = 512
    test_samples_per_node: int = 128
    hetero_alpha: float = 0.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.hetero_alpha < 0:
            raise ValueError("hetero_alpha must be >= 0")


@dataclass
class LocalDataset:
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature and target row counts disagree")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class RoundWork:
    flops: int
    steps: int
    batch: int


def make_fleet_with_test(spec: SyntheticTaskSpec, n_nodes: int):
    """Draw the shared ground-truth weights once, then per-node train and test
    splits from the same per-node distribution: standard-normal features and
    targets X (w* + alpha * u_node) + noise, with u_node a unit perturbation."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    rng = np.random.default_rng([spec.seed, _SALT_FLEET])
    w_star = rng.normal(size=spec.dim)
    train, test = [], []
    for node in range(n_nodes):
        node_rng = np.random.default_rng([spec.seed, _SALT_FLEET, node])
        u = node_rng.normal(size=spec.dim)
        u /= np.linalg.norm(u)
        w_node = w_star + spec.hetero_alpha * u
        for out, count in ((train, spec.samples_per_node), (test, spec.test_samples_per_node)):
            features = node_rng.normal(size=(count, spec.dim))
            noise = node_rng.normal(size=count) * spec.noise_std if spec.noise_std > 0 else 0.0
            out.append(LocalDataset(features, features @ w_node + noise))
    return train, test, w_star


def make_synthetic_fleet(spec: SyntheticTaskSpec, n_nodes: int):
    """Per-node training datasets plus the ground-truth weight vector."""
    train, _, w_star = make_fleet_with_test(spec, n_nodes)
    return train, w_star


def mse_loss(x: np.ndarray, data: LocalDataset) -> float:
    residual = data.features @ x - data.targets
    return float(np.mean(residual**2))


def mse_gradient(x: np.ndarray, features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of mean (pred - y)^2 over the batch: 2 X^T (X x - y) / B."""
    residual = features @ x - targets
    return 2.0 * features.T @ residual / features.shape[0]


def flops_estimate(dim: int, samples: int) -> int:
    """Workload of one epoch over `samples` rows of a dim-weight linear model."""
    if dim < 0 or samples < 0:
        raise ValueError("dim and samples must be >= 0")
    return FLOPS_PER_WEIGHT_SAMPLE * dim * samples


def local_epoch(x: np.ndarray, data: LocalDataset, lr: float, batch: int, rng):
    """One shuffled pass of mini-batch SGD on the local MSE.

    Returns the updated vector, the sample-weighted mean of the pre-step batch
    losses (equal to the dataset MSE when lr = 0), and the FLOP estimate.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if data.n_samples == 0:
        raise ValueError("empty dataset")
    batch = max(1, min(batch, data.n_samples))
    order = rng.permutation(data.n_samples)
    x = np.asarray(x, dtype=float).copy()
    sq_sum = 0.0
    steps = 0
    for start in range(0, data.n_samples, batch):
        idx = order[start : start + batch]
        xb, yb = data.features[idx], data.targets[idx]
        residual = xb @ x - yb
        sq_sum += float(np.sum(residual**2))
        x -= lr * (2.0 * xb.T @ residual / idx.size)
        steps += 1
    loss = sq_sum / data.n_samples
    return x, loss, RoundWork(flops_estimate(data.features.shape[1], data.n_samples), steps, batch)


def centralized_oracle(fleet, ridge: float = 0.0):
    """Closed-form (ridge) least squares on the pooled fleet data; the
    acceptance reference every decentralized run is compared against."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    features = np.vstack([d.features for d in fleet])
    targets = np.concatenate([d.targets for d in fleet])
    dim = features.shape[1]
    gram = features.T @ features + ridge * np.eye(dim)
    w = np.linalg.solve(gram, features.T @ targets)
    pooled = LocalDataset(features, targets)
    return w, mse_loss(w, pooled)


def eval_metrics(x: np.ndarray, data: LocalDataset) -> dict:
    """MSE, RMSE, and R^2 of the model on one dataset."""
    residual = data.features @ x - data.targets
    mse = float(np.mean(residual**2))
    ss_tot = float(np.sum((data.targets - data.targets.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residual**2)) / ss_tot if ss_tot > 0 else 0.0
    return {"mse": mse, "rmse": math.sqrt(mse), "r2": r2}


class LinearLearner:
    """Local-objective hook used by every strategy: one SGD epoch per
    participation round on the node's dataset, with per-(node, round) RNG."""

    def __init__(self, fleet, lr: float = 0.05, batch: int = 128, seed: int = 0):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.fleet = fleet
        self.lr = lr
        self.batch = batch
        self.seed = seed

    def epoch(self, node: int, x: np.ndarray, t: int):
        rng = np.random.default_rng([self.seed, _SALT_EPOCH, node, t])
        return local_epoch(x, self.fleet[node], self.lr, self.batch, rng)

    def initial_loss(self, node: int, x: np.ndarray) -> float:
        return mse_loss(x, self.fleet[node])


# ---------------------------------------------------------------------------
# Time-series preprocessing for user CSVs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreprocessConfig:
    target: str
    window_len: int = 30
    horizon: int = 1
    top_features: int = 9
    rolling_len: int = 12
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.window_len < 1 or self.horizon < 1:
            raise ValueError("window_len and horizon must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")


@dataclass
class PreprocessResult:
    train: LocalDataset
    test: LocalDataset
    selected_features: list
    feature_columns: list


def _rank_features(train: pd.DataFrame, target: str, top: int) -> list:
    """Absolute Pearson correlation against the target, train split only;
    zero-variance columns score 0."""
    scores = {}
    y = train[target]
    for col in train.columns:
        if col == target:
            continue
        x = train[col]
        if x.std(ddof=0) == 0 or y.std(ddof=0) == 0:
            scores[col] = 0.0
        else:
            scores[col] = float(abs(np.corrcoef(x, y)[0, 1]))
    ranked = sorted(scores, key=lambda c: (-scores[c], c))
    return ranked[:top]


def _augment(frame: pd.DataFrame, target: str, selected, rolling_len: int) -> pd.DataFrame:
    out = frame[selected + [target]].copy()
    out["target_lag1"] = out[target].shift(1)
    for col in selected:
        out[f"{col}_diff1"] = out[col].diff()
        out[f"{col}_roll{rolling_len}"] = out[col].rolling(rolling_len).mean()
    out["time_index"] = np.arange(len(out)) / max(len(out) - 1, 1)
    return out.dropna()


def _window(features: np.ndarray, targets: np.ndarray, window_len: int, horizon: int):
    n = features.shape[0] - window_len - horizon + 1
    if n < 1:
        raise ValueError("not enough rows after cleaning for the window/horizon")
    xs = np.stack([features[t : t + window_len].ravel() for t in range(n)])
    ys = np.array([targets[t + window_len + horizon - 1] for t in range(n)])
    return xs, ys


def preprocess_timeseries(raw: pd.DataFrame, config: PreprocessConfig) -> PreprocessResult:
    """Leakage-safe pipeline: contiguous split, impute, drop missing targets,
    correlation-rank on the train split, add lag/difference/rolling-mean/time
    features, standardize with train-fitted scalers, and flatten sliding
    windows into per-sample vectors."""
    if config.target not in raw.columns:
        raise ValueError(f"target column {config.target!r} not in data")
    if not pd.api.types.is_numeric_dtype(raw[config.target]):
        raise ValueError(f"target column {config.target!r} must be numeric")
    numeric = raw.select_dtypes(include=[np.number]).copy()
    split = int(len(numeric) * config.split_ratio)
    parts = []
    for frame in (numeric.iloc[:split], numeric.iloc[split:]):
        frame = frame.copy()
        predictors = [c for c in frame.columns if c != config.target]
        frame[predictors] = frame[predictors].ffill().bfill()
        frame = frame.dropna(subset=[config.target])
        parts.append(frame.reset_index(drop=True))
    train_raw, test_raw = parts

    selected = _rank_features(train_raw, config.target, config.top_features)
    train_aug = _augment(train_raw, config.target, selected, config.rolling_len)
    test_aug = _augment(test_raw, config.target, selected, config.rolling_len)

    feature_cols = [c for c in train_aug.columns if c != config.target]
    mu_x = train_aug[feature_cols].mean()
    sd_x = train_aug[feature_cols].std(ddof=0).replace(0.0, 1.0)
    mu_y = train_aug[config.target].mean()
    sd_y = train_aug[config.target].std(ddof=0) or 1.0

    datasets = []
    for frame in (train_aug, test_aug):
        feats = ((frame[feature_cols] - mu_x) / sd_x).to_numpy()
        targs = ((frame[config.target] - mu_y) / sd_y).to_numpy()
        xs, ys = _window(feats, targs, config.window_len, config.horizon)
        datasets.append(LocalDataset(xs, ys))
    return PreprocessResult(datasets[0], datasets[1], selected, feature_cols)


def fleet_from_csv(path, config: PreprocessConfig, n_nodes: int):
    """Build an n-node fleet from one CSV: the preprocessed train windows are
    partitioned contiguously across nodes; the test windows are pooled."""
    raw = pd.read_csv(path)
    result = preprocess_timeseries(raw, config)
    n = result.train.n_samples
    if n < n_nodes:
        raise ValueError(f"only {n} training windows for {n_nodes} nodes")
    bounds = np.linspace(0, n, n_nodes + 1).astype(int)
    fleet = [
        LocalDataset(result.train.features[a:b], result.train.targets[a:b])
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    return fleet, result.test
