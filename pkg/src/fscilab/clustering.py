"""Clustering-friendly representation learning and pseudo-label assignment.

Trains an embedding on the unlabeled pool with two objectives — instance
discrimination against a momentum memory bank, and decorrelation of
embedding dimensions — then clusters the pool with k-means and assigns each
cluster a pseudo-label in the incremental class range. Also provides the
partition agreement scores used to judge cluster quality: adjusted Rand
index and best-bijection clustering accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datastream import Example, features_matrix
from .encoder import (
    NORM_GUARD,
    EncoderParams,
    backward,
    forward_with_cache,
    init_optimizer,
    init_params,
    normalize_rows,
    normalize_rows_backward,
    sgd_step,
)


@dataclass(frozen=True)
class MemoryBank:
    """One unit-norm row per unlabeled instance (row order = pool order)."""

    vectors: np.ndarray
    momentum: float
    temperature: float

    def __post_init__(self):
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms[norms > NORM_GUARD], 1.0, atol=1e-6):
            raise ValueError("memory bank rows must be unit-norm")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("bank momentum must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("bank temperature must be > 0")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class DecorrelationConfig:
    """Temperature and weight of the dimension-decorrelation objective."""

    temperature: float = 2.0
    weight: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("decorrelation temperature must be > 0")
        if self.weight < 0:
            raise ValueError("decorrelation weight must be >= 0")


def init_bank(embeddings: np.ndarray, momentum: float, temperature: float) -> MemoryBank:
    return MemoryBank(
        vectors=normalize_rows(np.asarray(embeddings, dtype=np.float64)),
        momentum=momentum,
        temperature=temperature,
    )


def instance_discrimination_loss(
    bank: MemoryBank, embeddings: np.ndarray, indices: Sequence[int]
) -> tuple[float, np.ndarray]:
    """Each embedding should look like its own bank row and unlike the rest.

    Per batch row r with bank index i: the probability of picking row i is
    a temperature softmax of bank-row dot products against the embedding;
    the loss is the summed negative log of the matched probabilities.
    Returns (loss, gradient with respect to the embeddings); the bank is
    treated as a constant.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != emb.shape[0]:
        raise ValueError("one bank index per batch row required")
    if idx.size and (idx.min() < 0 or idx.max() >= bank.size):
        raise ValueError(f"bank index out of range [0, {bank.size})")
    logits = emb @ bank.vectors.T / bank.temperature
    logits -= logits.max(axis=1, keepdims=True)  # stability shift
    expl = np.exp(logits)
    denom = expl.sum(axis=1, keepdims=True)
    probs = expl / denom
    rows = np.arange(emb.shape[0])
    loss = float(-np.log(probs[rows, idx]).sum())
    dlogits = probs.copy()
    dlogits[rows, idx] -= 1.0
    grad = dlogits @ bank.vectors / bank.temperature
    return loss, grad


def update_bank(bank: MemoryBank, embeddings: np.ndarray, indices: Sequence[int]) -> MemoryBank:
    """Blend rows toward new embeddings: row <- normalize(m*row + (1-m)*emb)."""
    idx = np.asarray(indices, dtype=np.int64)
    blended = bank.momentum * bank.vectors[idx] + (1.0 - bank.momentum) * np.asarray(embeddings)
    vectors = bank.vectors.copy()
    vectors[idx] = normalize_rows(blended)
    return MemoryBank(vectors=vectors, momentum=bank.momentum, temperature=bank.temperature)


def feature_decorrelation_loss(
    embeddings: np.ndarray, config: DecorrelationConfig
) -> tuple[float, np.ndarray, tuple[int, ...]]:
    """Push distinct embedding dimensions toward mutual orthogonality.

    The batch matrix is transposed into one vector per embedding dimension;
    each is unit-normalized, and the loss is a temperature softmax game in
    which every dimension-vector must be most similar to itself. Dimensions
    whose vector norm falls under the guard carry no signal; they are
    skipped and reported in the third return slot.

    Returns (loss, gradient with respect to the embeddings, skipped dims).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError("decorrelation needs a batch of >= 2 embeddings")
    dim_vectors = emb.T  # one row per embedding dimension
    norms = np.linalg.norm(dim_vectors, axis=1)
    live = norms > NORM_GUARD
    skipped = tuple(int(i) for i in np.nonzero(~live)[0])
    g = dim_vectors[live] / norms[live][:, None]
    m = g.shape[0]
    if m == 0:
        return 0.0, np.zeros_like(emb), skipped
    sims = g @ g.T / config.temperature  # sims[j, i] = match of dim j against query i
    shifted = sims - sims.max(axis=0, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=0, keepdims=True)  # column softmax per query dim
    diag = np.arange(m)
    loss = float(-np.log(probs[diag, diag]).sum())
    dsims = probs.copy()
    dsims[diag, diag] -= 1.0
    grad_g = (dsims + dsims.T) @ g / config.temperature
    grad_dim = np.zeros_like(dim_vectors)
    grad_dim[live] = normalize_rows_backward(dim_vectors[live], grad_g)
    return loss, grad_dim.T, skipped


def combined_loss(instance_loss: float, decorrelation_loss: float, weight: float) -> float:
    """Total unsupervised objective: instance term plus weighted decorrelation."""
    return instance_loss + weight * decorrelation_loss


@dataclass(frozen=True)
class RepresentationConfig:
    """Training-loop knobs for the unsupervised representation stage."""

    instance_temperature: float = 0.1
    decorrelation_temperature: float = 2.0
    decorrelation_weight: float = 1.0
    bank_momentum: float = 0.5
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9

    def __post_init__(self):
        if self.instance_temperature <= 0:
            raise ValueError("instance temperature must be > 0")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch size >= 2")


@dataclass(frozen=True)
class RepresentationResult:
    params: EncoderParams
    bank: MemoryBank
    # one row per epoch: (epoch, instance loss, decorrelation loss, total)
    trace: tuple[tuple[int, float, float, float], ...]


def train_representation(
    pool: Sequence[Example],
    encoder_dims: Sequence[int],
    config: RepresentationConfig,
    seed: int,
    activation: str = "relu",
) -> RepresentationResult:
    """Fit the clustering-friendly embedding on the unlabeled pool.

    The bank is initialized from a forward pass of the freshly initialized
    encoder; each seeded mini-batch minimizes the combined objective on
    unit-normalized embeddings, then refreshes its bank rows from the batch
    embeddings. Deterministic per (pool, dims, config, seed).
    """
    if not pool:
        raise ValueError("representation training needs a non-empty pool")
    inputs = features_matrix(pool)
    if tuple(encoder_dims)[0] != inputs.shape[1]:
        raise ValueError("encoder input dim does not match pool features")
    params = init_params(encoder_dims, seed=seed, activation=activation)
    rng = np.random.default_rng(seed)
    decor = DecorrelationConfig(
        temperature=config.decorrelation_temperature, weight=config.decorrelation_weight
    )
    bank = init_bank(
        forward_with_cache(params, inputs).output,
        momentum=config.bank_momentum,
        temperature=config.instance_temperature,
    )
    opt = init_optimizer(params, config.learning_rate, config.momentum)
    trace: list[tuple[int, float, float, float]] = []
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sum_inst = 0.0
        sum_dec = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            if batch_idx.size < 2:
                continue  # decorrelation undefined on singleton batches
            cache = forward_with_cache(params, inputs[batch_idx])
            emb = normalize_rows(cache.output)
            inst_loss, inst_grad = instance_discrimination_loss(bank, emb, batch_idx)
            dec_loss, dec_grad, _ = feature_decorrelation_loss(emb, decor)
            grad_emb = inst_grad + decor.weight * dec_grad
            grads, _ = backward(params, cache, grad_emb, normalized=True)
            params, opt = sgd_step(params, grads, opt)
            bank = update_bank(bank, emb, batch_idx)
            sum_inst += inst_loss
            sum_dec += dec_loss
        trace.append(
            (epoch, sum_inst, sum_dec, combined_loss(sum_inst, sum_dec, decor.weight))
        )
    return RepresentationResult(params=params, bank=bank, trace=tuple(trace))


def dump_loss_trace(trace: Sequence[tuple[int, float, float, float]]) -> str:
    lines = ["epoch,instance_loss,decorrelation_loss,total_loss"]
    for epoch, inst, dec, total in trace:
        lines.append(f"{epoch},{repr(float(inst))},{repr(float(dec))},{repr(float(total))}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# k-means and pseudo-label assignment.

@dataclass(frozen=True)
class ClusterResult:
    centroids: np.ndarray
    assignment: np.ndarray  # instance index -> cluster index
    inertia: float
    inertia_trace: tuple[float, ...]

    @property
    def cluster_count(self) -> int:
        return self.centroids.shape[0]


def _nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)  # argmin breaks ties toward the lowest index
    return assign, d2[np.arange(points.shape[0]), assign]


def kmeans(embeddings: np.ndarray, k: int, seed: int, max_iter: int = 200) -> ClusterResult:
    """Lloyd's algorithm with seeded greedy farthest-point initialization.

    Ties in nearest-centroid go to the lowest cluster index; a cluster left
    empty by an update is reseeded at the instance farthest from its current
    centroid. The inertia after every assignment is recorded; the sequence
    is non-increasing.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    chosen = [first]
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(d2.argmax())
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    centroids = x[chosen].copy()

    assign, dist2 = _nearest(x, centroids)
    trace = [float(dist2.sum())]
    for _ in range(max_iter):
        for c in range(k):
            members = assign == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                far = int(dist2.argmax())
                centroids[c] = x[far]
                dist2[far] = 0.0  # keep later empty clusters from reusing it
        new_assign, dist2 = _nearest(x, centroids)
        trace.append(float(dist2.sum()))
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return ClusterResult(
        centroids=centroids,
        assignment=assign,
        inertia=trace[-1],
        inertia_trace=tuple(trace),
    )


@dataclass(frozen=True)
class PseudoLabeledSet:
    """Pool examples re-tagged with cluster-derived labels in [label_base,
    label_base + cluster_count)."""

    examples: tuple[Example, ...]
    label_base: int
    cluster_count: int

    def __post_init__(self):
        lo, hi = self.label_base, self.label_base + self.cluster_count
        for ex in self.examples:
            if ex.label is None or not lo <= ex.label < hi:
                raise ValueError(f"pseudo-label {ex.label} outside [{lo}, {hi})")


def assign_pseudo_labels(
    result: ClusterResult,
    label_base: int,
    pool: Sequence[Example],
    expected_clusters: int | None = None,
) -> PseudoLabeledSet:
    """Cluster c becomes pseudo-label label_base + c.

    The cluster-to-class map is an arbitrary bijection into the incremental
    label range; downstream training tolerates any such matching.
    """
    if expected_clusters is not None and result.cluster_count != expected_clusters:
        raise ValueError(
            f"expected {expected_clusters} clusters, result has {result.cluster_count}"
        )
    if len(pool) != result.assignment.shape[0]:
        raise ValueError("pool size does not match cluster assignment")
    relabeled = tuple(
        Example(features=ex.features, label=label_base + int(c), uid=ex.uid)
        for ex, c in zip(pool, result.assignment)
    )
    return PseudoLabeledSet(
        examples=relabeled, label_base=label_base, cluster_count=result.cluster_count
    )


def dump_assignment(pool: Sequence[Example], pseudo: PseudoLabeledSet) -> str:
    lines = ["uid,cluster,pseudo_label"]
    for ex in pseudo.examples:
        lines.append(f"{ex.uid},{ex.label - pseudo.label_base},{ex.label}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Partition agreement scores.

def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def ari(partition_a: Sequence[int], partition_b: Sequence[int]) -> float:
    """Adjusted Rand index (Hubert–Arabie).

    Computed from the contingency table in exact integer arithmetic, so the
    result is the correctly rounded float of the true rational value. A
    degenerate (zero) denominator — both partitions trivial — scores 1.0.
    """
    a = list(partition_a)
    b = list(partition_b)
    if len(a) != len(b):
        raise ValueError(f"partition lengths differ: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("ARI needs at least 2 elements")
    counts: dict[tuple[int, int], int] = {}
    rows: dict[int, int] = {}
    cols: dict[int, int] = {}
    for la, lb in zip(a, b):
        counts[(la, lb)] = counts.get((la, lb), 0) + 1
        rows[la] = rows.get(la, 0) + 1
        cols[lb] = cols.get(lb, 0) + 1
    sum_cells = sum(_comb2(v) for v in counts.values())
    sum_rows = sum(_comb2(v) for v in rows.values())
    sum_cols = sum(_comb2(v) for v in cols.values())
    total = _comb2(n)
    # index minus expected over max minus expected, cleared of denominators:
    numerator = 2 * (total * sum_cells - sum_rows * sum_cols)
    denominator = total * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols
    if denominator == 0:
        return 1.0
    return numerator / denominator


@dataclass(frozen=True)
class MatchResult:
    accuracy: float
    mapping: tuple[tuple[int, int], ...]  # (cluster, class) matched pairs
    rectangular_fallback: bool


def clustering_match(
    assignment: Sequence[int], truth: Sequence[int]
) -> MatchResult:
    """Best bijective cluster-to-class matching on the contingency table.

    Solved as an assignment problem maximizing matched instances. When the
    cluster and class counts differ, the rectangular problem is solved
    instead (unmatched clusters contribute zero) and the result is flagged.
    """
    pred = list(assignment)
    true = list(truth)
    if len(pred) != len(true):
        raise ValueError("assignment and truth lengths differ")
    if not pred:
        raise ValueError("empty partitions")
    clusters = sorted(set(pred))
    classes = sorted(set(true))
    table = np.zeros((len(clusters), len(classes)), dtype=np.int64)
    ci = {c: i for i, c in enumerate(clusters)}
    ki = {c: i for i, c in enumerate(classes)}
    for p, t in zip(pred, true):
        table[ci[p], ki[t]] += 1
    row_ind, col_ind = linear_sum_assignment(table, maximize=True)
    matched = int(table[row_ind, col_ind].sum())
    mapping = tuple((clusters[r], classes[c]) for r, c in zip(row_ind, col_ind))
    return MatchResult(
        accuracy=matched / len(pred),
        mapping=mapping,
        rectangular_fallback=len(clusters) != len(classes),
    )


def clustering_accuracy(assignment: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of instances explained by the best cluster-to-class bijection."""
    return clustering_match(assignment, truth).accuracy
