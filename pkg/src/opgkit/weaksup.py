"""Weak-supervision training against the coherence reward.

Instead of decoding, training draws one class per object from the policy's
distribution. Samples may collide on a class; collisions and absent teeth
are penalized by flipping the sign of the sampled probability: an entry
stays positive only when its tooth is present in the weak label and the
object holds the largest sampled probability for that class. The resulting
signed reward feeds a score-function (REINFORCE) gradient estimator whose
baseline is the mean reward across the sample batch; the log-probability
term always uses the unsigned sampling probability, since the sign carries
the supervision and a negative probability has no logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coherence import DecoderConfig, decode_assignment, reward_value
from .core.types import DentitionLabel, OverlapTensor


@dataclass(frozen=True)
class SampledAssignment:
    """One-hot class choice per object plus the joint log-probability."""

    classes: tuple[int, ...]
    n_classes: int
    log_prob: float

    @property
    def n_objects(self) -> int:
        return len(self.classes)

    def onehot(self) -> np.ndarray:
        e = np.zeros((len(self.classes), self.n_classes), dtype=np.uint8)
        for n, c in enumerate(self.classes):
            e[n, c] = 1
        return e


@dataclass(frozen=True)
class RLConfig:
    """Sampling and optimization knobs for weak-supervision training."""

    samples_per_instance: int = 64
    learning_rate: float = 0.05
    steps: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.samples_per_instance < 2:
            raise ValueError("samples_per_instance must be >= 2 (the baseline needs variance)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be positive")


class ToyPolicy:
    """Linear map from per-object features to class logits, softmaxed."""

    __slots__ = ("_theta",)

    def __init__(self, theta: np.ndarray):
        t = np.ascontiguousarray(theta, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"theta must be (features, classes), got shape {t.shape}")
        t.flags.writeable = False
        self._theta = t

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @property
    def n_features(self) -> int:
        return self._theta.shape[0]

    @property
    def n_classes(self) -> int:
        return self._theta.shape[1]

    def probs(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != self.n_features:
            raise ValueError(
                f"features must be (objects, {self.n_features}), got shape {f.shape}"
            )
        logits = f @ self._theta
        logits -= logits.max(axis=1, keepdims=True) if logits.size else 0.0
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True) if p.size else 1.0
        return p

    @classmethod
    def scaled_identity(cls, n_classes: int, scale: float, n_extra_features: int = 0) -> "ToyPolicy":
        """Policy whose logits echo the first ``n_classes`` feature entries."""
        theta = np.zeros((n_classes + n_extra_features, n_classes))
        theta[:n_classes, :n_classes] = scale * np.eye(n_classes)
        return cls(theta)


def _validate_rows(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probability matrix must be 2-D, got shape {probs.shape}")
    if probs.size:
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("every row must be a normalized probability vector")
    return probs


def _present_flags(label: DentitionLabel | Sequence[bool], n_classes: int) -> np.ndarray:
    present = np.asarray(
        label.present if isinstance(label, DentitionLabel) else label, dtype=bool
    )
    if present.shape != (n_classes,):
        raise ValueError(
            f"presence flags must have length {n_classes}, got shape {present.shape}"
        )
    return present


def sample_assignment(probs: np.ndarray, rng: np.random.Generator) -> SampledAssignment:
    """Draw one class per object, independently, from its probability row."""
    probs = _validate_rows(probs)
    n, c = probs.shape
    if n == 0:
        return SampledAssignment((), c, 0.0)
    classes = _sample_many(probs, rng, 1)[0]
    picked = probs[np.arange(n), classes]
    if picked.min() <= 0.0:
        raise ValueError("sampled a zero-probability class")
    log_prob = float(np.log(picked).sum())
    return SampledAssignment(tuple(int(v) for v in classes), c, log_prob)


def _sample_many(probs: np.ndarray, rng: np.random.Generator, k: int) -> np.ndarray:
    """(k, n_objects) class indices drawn row-wise from ``probs``."""
    n, c = probs.shape
    u = rng.random((k, n))
    out = np.empty((k, n), dtype=np.int64)
    for i in range(n):
        cum = np.cumsum(probs[i])
        out[:, i] = np.searchsorted(cum, u[:, i], side="right")
    return np.minimum(out, c - 1)


def signed_probabilities(
    probs: np.ndarray,
    sample: SampledAssignment,
    label: DentitionLabel | Sequence[bool],
) -> np.ndarray:
    """Sign the probability matrix according to the weak label and sample.

    The sampled entry (n, c) keeps its positive sign only when tooth ``c``
    is present and object ``n`` carries the largest probability among the
    objects sampled to ``c`` (ties resolved toward the lowest index); it is
    negated otherwise. Entries not selected by the sample pass through
    unsigned; downstream reward evaluation never reads them.
    """
    probs = _validate_rows(probs)
    n, c = probs.shape
    if sample.n_objects != n or sample.n_classes != c:
        raise ValueError(
            f"sample is {sample.n_objects}x{sample.n_classes}, probabilities are {n}x{c}"
        )
    present = _present_flags(label, c)
    signed = probs.copy()
    by_class: dict[int, list[int]] = {}
    for i, ci in enumerate(sample.classes):
        by_class.setdefault(ci, []).append(i)
    for ci, members in by_class.items():
        winner = max(members, key=lambda i: (probs[i, ci], -i))
        for i in members:
            if not (present[ci] and i == winner):
                signed[i, ci] = -probs[i, ci]
    return signed


def sampled_reward(
    signed_probs: np.ndarray,
    sample: SampledAssignment,
    overlaps: OverlapTensor,
    config: DecoderConfig = DecoderConfig(),
) -> float:
    """Coherence reward of a sampled assignment under signed probabilities.

    Samples need not respect the one-object-per-class constraint; the sign
    flips in ``signed_probs`` are what penalize collisions.
    """
    signed_probs = np.asarray(signed_probs, dtype=np.float64)
    n, c = signed_probs.shape
    if sample.n_objects != n or sample.n_classes != c:
        raise ValueError(
            f"sample is {sample.n_objects}x{sample.n_classes}, matrix is {n}x{c}"
        )
    if overlaps.n_objects != n or overlaps.n_classes != c:
        raise ValueError(
            f"overlap tensor is {overlaps.n_objects}x{overlaps.n_classes}, matrix is {n}x{c}"
        )
    return reward_value(
        signed_probs, list(sample.classes), overlaps, config.quadratic_weight, config.pair_factor
    )


def _sampled_rewards_many(
    probs: np.ndarray,
    samples: np.ndarray,
    present: np.ndarray,
    overlaps: OverlapTensor,
    config: DecoderConfig,
) -> np.ndarray:
    """Vectorized signed rewards for a (k, n_objects) sample batch."""
    k, n = samples.shape
    c = probs.shape[1]
    if n == 0:
        return np.zeros(k)
    rows = np.arange(k)[:, None]
    cols = np.arange(n)[None, :]
    v = probs[cols, samples]  # (k, n) sampled probabilities

    maxv = np.zeros((k, c))
    np.maximum.at(maxv, (rows.repeat(n, axis=1), samples), v)
    winner = np.full((k, c), n, dtype=np.int64)
    contender = np.where(v == maxv[rows, samples], cols, n)
    np.minimum.at(winner, (rows.repeat(n, axis=1), samples), contender)

    positive = present[samples] & (cols == winner[rows, samples])
    signed_v = np.where(positive, v, -v)
    linear = signed_v.sum(axis=1)

    penalty = np.zeros(k)
    for a, b, val in overlaps.pair_items():
        if isinstance(val, np.ndarray):
            penalty += val[samples[:, a], samples[:, b]]
        else:
            # Shared-mask pair: overlap does not depend on the sampled classes.
            penalty += val
    return linear - config.quadratic_weight * config.pair_factor * penalty


def _estimate_gradient(
    policy: ToyPolicy,
    features: np.ndarray,
    overlaps: OverlapTensor,
    label: DentitionLabel | Sequence[bool],
    config: RLConfig,
    rng: np.random.Generator,
    reward_config: DecoderConfig,
    use_baseline: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Score-function gradient of the training loss and the sample rewards."""
    features = np.asarray(features, dtype=np.float64)
    probs = policy.probs(features)
    n, c = probs.shape
    present = _present_flags(label, c)
    k = config.samples_per_instance
    if n == 0:
        return np.zeros_like(policy.theta), np.zeros(k)
    samples = _sample_many(probs, rng, k)
    picked = probs[np.arange(n)[None, :], samples]
    if picked.min() <= 0.0:
        raise ValueError("policy sampled a zero-probability class; cannot form log term")
    rewards = _sampled_rewards_many(probs, samples, present, overlaps, reward_config)
    advantage = rewards - rewards.mean() if use_baseline else rewards

    # d(log p[n, c_n])/d(theta) = f_n outer (onehot(c_n) - p_n); accumulate the
    # advantage-weighted one-hot part sparsely, the -p part in closed form.
    d = np.zeros((n, c))
    np.add.at(d, (np.broadcast_to(np.arange(n), samples.shape), samples), advantage[:, None])
    d -= advantage.sum() * probs
    grad = -(features.T @ d) / k
    return grad, rewards


def reinforce_gradient(
    policy: ToyPolicy,
    features: np.ndarray,
    overlaps: OverlapTensor,
    label: DentitionLabel | Sequence[bool],
    config: RLConfig,
    rng: np.random.Generator,
    reward_config: DecoderConfig = DecoderConfig(),
) -> np.ndarray:
    """Monte-Carlo estimate of the loss gradient w.r.t. the policy parameters.

    Draws ``config.samples_per_instance`` assignments, baselines every
    sample's signed reward with the batch mean, and averages the
    score-function terms.
    """
    grad, _rewards = _estimate_gradient(
        policy, features, overlaps, label, config, rng, reward_config
    )
    return grad


@dataclass(frozen=True)
class RLInstance:
    """One training example: object features, mask overlaps, weak label.

    ``true_classes`` (one class index per object, -1 when the object is a
    corruption artifact with no target) is optional reference data used only
    to report assignment accuracy; the gradient never sees it.
    """

    features: np.ndarray
    overlaps: OverlapTensor
    present: np.ndarray
    true_classes: np.ndarray | None = None


@dataclass
class TrainResult:
    policy: ToyPolicy
    # One row per step, metrics measured before that step's update.
    steps: list[int]
    mean_reward: list[float]
    accuracy: list[float]


def assignment_accuracy(
    policy: ToyPolicy,
    instances: Sequence[RLInstance],
    decode_config: DecoderConfig,
) -> float:
    """Share of present teeth whose detection is decoded to the right class."""
    hit = 0
    total = 0
    for inst in instances:
        if inst.true_classes is None:
            raise ValueError("accuracy requires instances with true_classes")
        probs = policy.probs(inst.features)
        result = decode_assignment(probs, inst.overlaps, decode_config)
        rows = result.assignment.row_classes()
        recovered = {
            c for n, c in enumerate(rows) if c is not None and inst.true_classes[n] == c
        }
        present_slots = np.flatnonzero(inst.present)
        total += present_slots.size
        hit += sum(1 for c in present_slots if c in recovered)
    if total == 0:
        raise ValueError("no present teeth to score")
    return hit / total


def train_toy(
    dataset: Sequence[RLInstance],
    config: RLConfig,
    policy: ToyPolicy | None = None,
    reward_config: DecoderConfig = DecoderConfig(),
    accuracy_decode_config: DecoderConfig | None = None,
) -> TrainResult:
    """Gradient-descent REINFORCE loop over a dataset of instances.

    Gradients are averaged across instances (and, inside each estimate,
    across samples). The trajectory records, per step, the mean sampled
    reward and the post-decode assignment accuracy of the pre-update policy.
    Deterministic given ``config.rng_seed``.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    n_features = dataset[0].features.shape[1]
    n_classes = dataset[0].present.shape[0]
    if policy is None:
        policy = ToyPolicy(np.zeros((n_features, n_classes)))
    if accuracy_decode_config is None:
        # Deterministic node cap keeps per-step evaluation bounded even for
        # diffuse early-training policies.
        accuracy_decode_config = DecoderConfig(max_nodes=50_000)
    track_accuracy = all(inst.true_classes is not None for inst in dataset)

    rng = np.random.default_rng(config.rng_seed)
    theta = policy.theta.copy()
    steps: list[int] = []
    rewards_log: list[float] = []
    accuracy_log: list[float] = []
    for step in range(config.steps):
        current = ToyPolicy(theta)
        grads = np.zeros_like(theta)
        step_reward = 0.0
        for inst in dataset:
            grad, rewards = _estimate_gradient(
                current, inst.features, inst.overlaps, inst.present, config, rng, reward_config
            )
            grads += grad
            step_reward += float(rewards.mean())
        grads /= len(dataset)
        step_reward /= len(dataset)

        steps.append(step)
        rewards_log.append(step_reward)
        accuracy_log.append(
            assignment_accuracy(current, dataset, accuracy_decode_config)
            if track_accuracy
            else float("nan")
        )

        theta = theta - config.learning_rate * grads
        if not np.isfinite(theta).all():
            raise FloatingPointError(f"policy parameters diverged at step {step}")
    return TrainResult(ToyPolicy(theta), steps, rewards_log, accuracy_log)
