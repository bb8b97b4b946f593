"""PAC learners for relative-frame k-DNF targets over windowed block features.

Features of an example are the (offset, token) pairs present within M blocks
of the target block. Candidate terms are all conjunctions of at most k such
features harvested from positive examples; full enumeration of C(F, k)
conjunctions is infeasible at k=4, and only data-supported terms can survive
anyway. The elimination learner keeps every candidate no negative example
satisfies, which makes it consistent by construction. The winnow learner runs
multiplicative updates over the same candidate pool, so its mistake count
scales with the number of relevant terms rather than the pool size.

Terms are packed into integer keys and processed as numpy arrays; windows are
aggregated with multiplicities first, which ties the cost to the window
distance M rather than the sequence length N.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .codec import BlockPresenceFeatures
from .compiler import RELATIVE, FeatureLiteral, KDnfFormula, parse_formula, format_formula
from .relational import AugmentedVocabulary


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    features: BlockPresenceFeatures
    target_block: int
    label: bool
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.target_block < self.features.n_blocks:
            raise LearnerError(f"target block {self.target_block} outside feature grid")


# A window feature is (offset + M) * |V'| + token_index; offsets run -M..M.

def window_feature_ids(features: BlockPresenceFeatures, block: int, max_offset: int) -> tuple[int, ...]:
    stride = features.vocab.n_tokens
    n = features.n_blocks
    out: list[int] = []
    for delta in range(-max_offset, max_offset + 1):
        p = block + delta
        if 0 <= p < n:
            base = (delta + max_offset) * stride
            out.extend(base + t for t in features.token_ids(p))
    return tuple(out)


def feature_of_id(fid: int, vocab: AugmentedVocabulary, max_offset: int) -> tuple[int, str]:
    stride = vocab.n_tokens
    return fid // stride - max_offset, vocab.all_tokens[fid % stride]


# Subset keys: ascending feature ids packed 12 bits apiece into a uint64.
# Sizes never mix: an s-subset key occupies bit range [12(s-1), 12s).

_PACK_BITS = 12
_PACK_MAX = (1 << _PACK_BITS) - 2
_MAX_TERM_SIZE = 5

_COMBO_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _combo_indices(length: int, size: int) -> np.ndarray:
    key = (length, size)
    arr = _COMBO_CACHE.get(key)
    if arr is None:
        arr = np.fromiter(
            (i for combo in combinations(range(length), size) for i in combo),
            dtype=np.int64,
        ).reshape(-1, size)
        _COMBO_CACHE[key] = arr
    return arr


def _subset_keys(window: np.ndarray, k: int) -> np.ndarray:
    """uint64 keys of every 1..k-subset of an ascending feature-id array."""
    length = len(window)
    if length == 0:
        return np.zeros(0, dtype=np.uint64)
    shifted = window.astype(np.uint64) + np.uint64(1)
    parts = []
    for size in range(1, min(k, length) + 1):
        sel = shifted[_combo_indices(length, size)]
        keys = sel[:, 0]
        for j in range(1, size):
            keys = (keys << np.uint64(_PACK_BITS)) | sel[:, j]
        parts.append(keys)
    return np.concatenate(parts) if len(parts) > 1 else parts[0]


def _pack_ids(ids: Sequence[int]) -> int:
    key = 0
    for fid in ids:
        key = (key << _PACK_BITS) | (fid + 1)
    return key


def _unpack_key(key: int) -> tuple[int, ...]:
    ids = []
    key = int(key)
    while key:
        ids.append((key & ((1 << _PACK_BITS) - 1)) - 1)
        key >>= _PACK_BITS
    return tuple(reversed(ids))


def _check_limits(k: int, max_offset: int, vocab: AugmentedVocabulary) -> None:
    if k < 1 or max_offset < 1:
        raise LearnerError("k and max offset must be >= 1")
    if k > _MAX_TERM_SIZE:
        raise LearnerError(f"term size bound {k} exceeds the packing limit {_MAX_TERM_SIZE}")
    top = (2 * max_offset + 1) * vocab.n_tokens - 1
    if top > _PACK_MAX:
        raise LearnerError(f"feature space of {top + 1} ids exceeds the packing limit")


@dataclass(frozen=True)
class TrainingStats:
    examples: int
    positives: int
    negatives: int
    distinct_windows: int
    harvested_terms: int
    surviving_terms: int
    uncovered_positives: int = 0
    mistakes: int | None = None
    advised_sample_size: int | None = None
    log: tuple[tuple[str, int, int], ...] = ()


def sample_size_bound(harvested_terms: int, epsilon: float = 0.05, delta: float = 0.05) -> int:
    """Consistent-learner bound m >= (1/eps)(ln|H| + ln(1/delta)) with
    |H| = 2^(harvested terms); advisory only."""
    ln_h = harvested_terms * math.log(2.0)
    return math.ceil((ln_h + math.log(1.0 / delta)) / epsilon)


@dataclass
class LearnedModel:
    """A per-target-token model: surviving terms, optionally weighted.

    Terms are stored portably as ((offset, token), ...) tuples; lookup arrays
    are built lazily against the vocabulary of the features being scored.
    """

    target_token: str
    k: int
    max_offset: int
    kind: str  # elimination | winnow | compiled
    terms: tuple[tuple[tuple[int, str], ...], ...]
    weights: tuple[float, ...] | None = None
    threshold: float | None = None
    stats: TrainingStats | None = None

    def __post_init__(self):
        self._bound_tokens: tuple[str, ...] | None = None
        self._keys: np.ndarray = np.zeros(0, dtype=np.uint64)
        self._key_to_index: dict[int, int] = {}
        self._features: frozenset[int] = frozenset()
        self._cache: dict[tuple[int, ...], int] = {}

    def _bind(self, vocab: AugmentedVocabulary) -> None:
        if self._bound_tokens is vocab.all_tokens or self._bound_tokens == vocab.all_tokens:
            return
        stride = vocab.n_tokens
        keys = []
        feats: set[int] = set()
        for term in self.terms:
            ids = sorted((d + self.max_offset) * stride + vocab.index_token(tok) for d, tok in term)
            keys.append(_pack_ids(ids))
            feats.update(ids)
        order = np.argsort(np.array(keys, dtype=np.uint64)) if keys else np.zeros(0, dtype=np.int64)
        self._keys = np.array(keys, dtype=np.uint64)[order]
        # sorted key -> index of the originating term in self.terms
        self._key_to_index = {int(key): int(idx) for key, idx in zip(self._keys.tolist(), order.tolist())}
        self._features = frozenset(feats)
        self._cache = {}
        self._bound_tokens = vocab.all_tokens

    def _match(self, window: Sequence[int]) -> int:
        """Index of the first satisfied term in harvest order, -1 if none."""
        relevant = tuple(f for f in window if f in self._features)
        hit = self._cache.get(relevant)
        if hit is None:
            hit = -1
            if relevant and len(self._keys):
                keys = _subset_keys(np.asarray(relevant, dtype=np.int64), self.k)
                pos = np.searchsorted(self._keys, keys)
                pos_c = np.minimum(pos, len(self._keys) - 1)
                found = np.flatnonzero(self._keys[pos_c] == keys)
                if len(found):
                    hit = int(found[0])  # subsets enumerate smallest-first
                    hit = self._key_to_index[int(keys[hit])]
            self._cache[relevant] = hit
        return hit

    def _satisfied(self, window: Sequence[int]) -> np.ndarray:
        relevant = tuple(f for f in window if f in self._features)
        if not relevant or not len(self._keys):
            return np.zeros(0, dtype=np.int64)
        keys = _subset_keys(np.asarray(relevant, dtype=np.int64), self.k)
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, len(self._keys) - 1)
        matched = keys[self._keys[pos_c] == keys]
        return np.fromiter((self._key_to_index[int(m)] for m in matched), dtype=np.int64)

    def decision_value(self, features: BlockPresenceFeatures, block: int) -> float:
        self._bind(features.vocab)
        window = window_feature_ids(features, block, self.max_offset)
        if self.weights is None:
            return 1.0 if self._match(window) >= 0 else 0.0
        sat = self._satisfied(window)
        return float(np.asarray(self.weights)[sat].sum()) if len(sat) else 0.0

    def predict(self, features: BlockPresenceFeatures, block: int) -> bool:
        if self.weights is None:
            return self.decision_value(features, block) > 0.0
        theta = self.threshold if self.threshold is not None else 1.0
        return self.decision_value(features, block) >= theta

    def predict_with_term(
        self, features: BlockPresenceFeatures, block: int
    ) -> tuple[tuple[int, str], ...] | None:
        """The firing term behind a positive prediction, for trace output."""
        if not self.predict(features, block):
            return None
        window = window_feature_ids(features, block, self.max_offset)
        idx = self._match(window)
        if idx < 0:
            sat = self._satisfied(window)
            idx = int(sat[0])
        return self.terms[idx]

    def to_formula(self) -> KDnfFormula:
        terms = tuple(tuple(FeatureLiteral(d, tok) for d, tok in term) for term in self.terms)
        return KDnfFormula(self.target_token, self.k, RELATIVE, terms)

    @classmethod
    def from_formula(cls, formula: KDnfFormula, max_offset: int | None = None) -> "LearnedModel":
        if formula.frame != RELATIVE:
            raise LearnerError("only relative-frame formulae can act as models")
        terms = tuple(tuple((lit.block, lit.token) for lit in term) for term in formula.terms)
        m = max_offset if max_offset is not None else max(formula.max_offset, 1)
        return cls(formula.target_token, formula.k, m, "compiled", terms)


def _aggregate_windows(
    train: Sequence[LabeledExample], max_offset: int, target_token: str | None
) -> tuple[dict[tuple[int, ...], list[int]], int, int, str]:
    windows: dict[tuple[int, ...], list[int]] = {}
    positives = negatives = 0
    token = target_token or ""
    for ex in train:
        if not token:
            token = str(ex.meta.get("target", ""))
        window = window_feature_ids(ex.features, ex.target_block, max_offset)
        counts = windows.setdefault(window, [0, 0])
        if ex.label:
            counts[0] += 1
            positives += 1
        else:
            counts[1] += 1
            negatives += 1
    if positives + negatives == 0:
        raise LearnerError("empty training set")
    return windows, positives, negatives, token


def _decode_terms(
    keys: Iterable[int], vocab: AugmentedVocabulary, max_offset: int
) -> tuple[tuple[tuple[int, str], ...], ...]:
    return tuple(
        tuple(feature_of_id(fid, vocab, max_offset) for fid in _unpack_key(key)) for key in keys
    )


def learn_elimination(
    train: Sequence[LabeledExample],
    k: int,
    max_offset: int,
    noise_budget: int = 0,
    target_token: str | None = None,
) -> LearnedModel:
    """Harvest all <=k-subsets of positive windows, eliminate every candidate
    that more than `noise_budget` negative examples satisfy, and return the
    disjunction of survivors.

    With a zero budget the result never fires on a training negative, and it
    fires on every training positive that any harvested term covers; positives
    left uncovered are recorded, not fatal.
    """
    if not train:
        raise LearnerError("training examples required")
    vocab = train[0].features.vocab
    _check_limits(k, max_offset, vocab)
    windows, positives, negatives, token = _aggregate_windows(train, max_offset, target_token)

    pos_windows = [(np.array(w, dtype=np.int64), p) for w, (p, _n) in windows.items() if p]
    neg_windows = [(np.array(w, dtype=np.int64), n) for w, (_p, n) in windows.items() if n]

    if pos_windows:
        pos_features = np.unique(np.concatenate([w for w, _ in pos_windows]))
        harvested = np.unique(np.concatenate([_subset_keys(w, k) for w, _ in pos_windows]))
    else:
        pos_features = np.zeros(0, dtype=np.int64)
        harvested = np.zeros(0, dtype=np.uint64)

    hits = np.zeros(len(harvested), dtype=np.int64)
    for w, n in neg_windows:
        if not len(harvested):
            break
        relevant = w[np.isin(w, pos_features, assume_unique=True)]
        keys = _subset_keys(relevant, k)
        if not len(keys):
            continue
        pos = np.searchsorted(harvested, keys)
        pos_c = np.minimum(pos, len(harvested) - 1)
        found = harvested[pos_c] == keys
        np.add.at(hits, pos_c[found], n)

    survivors = harvested[hits <= noise_budget]
    survivor_features = (
        np.unique(np.concatenate([np.array(_unpack_key(s), dtype=np.int64) for s in survivors]))
        if len(survivors)
        else np.zeros(0, dtype=np.int64)
    )

    uncovered = 0
    for w, p in pos_windows:
        relevant = w[np.isin(w, survivor_features, assume_unique=True)]
        keys = _subset_keys(relevant, k)
        if len(keys):
            pos = np.searchsorted(survivors, keys)
            pos_c = np.minimum(pos, max(len(survivors) - 1, 0))
            if len(survivors) and bool((survivors[pos_c] == keys).any()):
                continue
        uncovered += p

    stats = TrainingStats(
        examples=positives + negatives,
        positives=positives,
        negatives=negatives,
        distinct_windows=len(windows),
        harvested_terms=int(len(harvested)),
        surviving_terms=int(len(survivors)),
        uncovered_positives=uncovered,
        advised_sample_size=sample_size_bound(int(len(harvested))),
        log=(("harvest", int(len(harvested)), 0), ("eliminate", int(len(survivors)), 0)),
    )
    terms = _decode_terms(survivors.tolist(), vocab, max_offset)
    return LearnedModel(token, k, max_offset, "elimination", terms, stats=stats)


def winnow_disjunction(
    examples: Iterable[tuple[Sequence[int], bool]],
    pool_size: int,
    promotion: float = 2.0,
    threshold: float | None = None,
) -> tuple[np.ndarray, int]:
    """Online multiplicative-update learner for a monotone disjunction over a
    fixed pool of Boolean meta-variables.

    Each example lists the indices of the pool items it satisfies. Predict
    positive when the satisfied weight mass reaches the threshold; on a false
    negative promote the satisfied weights by `promotion`, on a false positive
    demote them by the same factor. Returns final weights and mistake count.
    """
    if promotion <= 1.0:
        raise LearnerError("promotion factor must exceed 1")
    theta = float(threshold) if threshold is not None else max(1.0, float(pool_size))
    if theta <= 0:
        raise LearnerError("threshold must be positive")
    weights = np.ones(pool_size, dtype=float)
    mistakes = 0
    for satisfied, label in examples:
        sat = np.asarray(satisfied, dtype=np.int64)
        score = float(weights[sat].sum()) if len(sat) else 0.0
        predicted = score >= theta
        if predicted != label:
            mistakes += 1
            if len(sat):
                weights[sat] *= promotion if label else 1.0 / promotion
    return weights, mistakes


def learn_winnow(
    train: Sequence[LabeledExample],
    k: int,
    max_offset: int,
    promotion: float = 2.0,
    threshold: float | None = None,
    target_token: str | None = None,
) -> LearnedModel:
    """Attribute-efficient learner: harvest the candidate pool from the
    positives, then one online pass in stream order with winnow updates."""
    if not train:
        raise LearnerError("training examples required")
    vocab = train[0].features.vocab
    _check_limits(k, max_offset, vocab)
    windows, positives, negatives, token = _aggregate_windows(train, max_offset, target_token)

    pos_arrays = [np.array(w, dtype=np.int64) for w, (p, _n) in windows.items() if p]
    if pos_arrays:
        pool_features = np.unique(np.concatenate(pos_arrays))
        pool = np.unique(np.concatenate([_subset_keys(w, k) for w in pos_arrays]))
    else:
        pool_features = np.zeros(0, dtype=np.int64)
        pool = np.zeros(0, dtype=np.uint64)
    pool_size = int(len(pool))
    theta = float(threshold) if threshold is not None else max(1.0, float(pool_size))

    sat_cache: dict[tuple[int, ...], np.ndarray] = {}

    def satisfied(window: tuple[int, ...]) -> np.ndarray:
        cached = sat_cache.get(window)
        if cached is None:
            w = np.asarray(window, dtype=np.int64)
            relevant = w[np.isin(w, pool_features, assume_unique=True)]
            keys = _subset_keys(relevant, k)
            if len(keys) and pool_size:
                pos = np.searchsorted(pool, keys)
                pos_c = np.minimum(pos, pool_size - 1)
                cached = pos_c[pool[pos_c] == keys]
            else:
                cached = np.zeros(0, dtype=np.int64)
            sat_cache[window] = cached
        return cached

    def stream():
        for ex in train:
            window = window_feature_ids(ex.features, ex.target_block, max_offset)
            yield satisfied(window), ex.label

    weights, mistakes = winnow_disjunction(stream(), pool_size, promotion, theta)

    stats = TrainingStats(
        examples=positives + negatives,
        positives=positives,
        negatives=negatives,
        distinct_windows=len(windows),
        harvested_terms=pool_size,
        surviving_terms=int((weights > 1.0).sum()),
        mistakes=mistakes,
        advised_sample_size=sample_size_bound(pool_size),
        log=(("harvest", pool_size, 0), ("online", pool_size, mistakes)),
    )
    return LearnedModel(
        token, k, max_offset, "winnow", _decode_terms(pool.tolist(), vocab, max_offset),
        weights=tuple(float(w) for w in weights), threshold=theta, stats=stats,
    )


@dataclass(frozen=True)
class EvalMetrics:
    total: int
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    abstained: int = 0

    @property
    def error(self) -> float:
        return (self.false_positives + self.false_negatives) / self.total if self.total else 0.0

    @property
    def accuracy(self) -> float:
        return 1.0 - self.error

    @property
    def fp_rate(self) -> float:
        negatives = self.false_positives + self.true_negatives
        return self.false_positives / negatives if negatives else 0.0

    @property
    def fn_rate(self) -> float:
        positives = self.false_negatives + self.true_positives
        return self.false_negatives / positives if positives else 0.0

    @property
    def coverage(self) -> float:
        seen = self.total + self.abstained
        return self.total / seen if seen else 1.0

    def as_row(self) -> dict[str, object]:
        return {
            "error": f"{self.error:.6f}",
            "fp_rate": f"{self.fp_rate:.6f}",
            "fn_rate": f"{self.fn_rate:.6f}",
            "coverage": f"{self.coverage:.6f}",
            "examples": self.total,
        }


def evaluate_model(
    model: LearnedModel,
    test: Sequence[LabeledExample],
    abstain_blocks: frozenset[int] | None = None,
) -> EvalMetrics:
    """Score per-(example, target block) predictions; blocks in the abstention
    set are skipped and counted against coverage only."""
    if not test:
        raise LearnerError("empty test set")
    tp = fp = tn = fn = abstained = 0
    for ex in test:
        if abstain_blocks is not None and ex.target_block in abstain_blocks:
            abstained += 1
            continue
        predicted = model.predict(ex.features, ex.target_block)
        if predicted and ex.label:
            tp += 1
        elif predicted:
            fp += 1
        elif ex.label:
            fn += 1
        else:
            tn += 1
    return EvalMetrics(tp + fp + tn + fn, tp, fp, tn, fn, abstained)


def learn_models(
    datasets: Mapping[str, Sequence[LabeledExample]],
    k: int,
    max_offset: int,
    learner: str = "elimination",
    **kwargs,
) -> dict[str, LearnedModel]:
    """Train one model per target token; datasets normally share feature grids
    so the windows are extracted from a single encoding pass."""
    fn = {"elimination": learn_elimination, "winnow": learn_winnow}.get(learner)
    if fn is None:
        raise LearnerError(f"unknown learner {learner!r}")
    return {
        token: fn(list(examples), k, max_offset, target_token=token, **kwargs)
        for token, examples in sorted(datasets.items())
    }


# ---------------------------------------------------------------------------
# Model files: the formula format plus a `stat <key> <value>` trailer.

def format_model(model: LearnedModel) -> str:
    out = [format_formula(model.to_formula()).rstrip("\n")]
    out.append(f"stat kind {model.kind}")
    out.append(f"stat max_offset {model.max_offset}")
    if model.threshold is not None:
        out.append(f"stat threshold {model.threshold!r}")
    if model.weights is not None:
        out.append("stat weights " + ",".join(repr(w) for w in model.weights))
    if model.stats is not None:
        s = model.stats
        out.append(f"stat examples {s.examples}")
        out.append(f"stat positives {s.positives}")
        out.append(f"stat negatives {s.negatives}")
        out.append(f"stat distinct_windows {s.distinct_windows}")
        out.append(f"stat harvested_terms {s.harvested_terms}")
        out.append(f"stat surviving_terms {s.surviving_terms}")
        out.append(f"stat uncovered_positives {s.uncovered_positives}")
        if s.mistakes is not None:
            out.append(f"stat mistakes {s.mistakes}")
        if s.advised_sample_size is not None:
            out.append(f"stat advised_sample_size {s.advised_sample_size}")
    return "\n".join(out) + "\n"


def parse_model(text: str) -> LearnedModel:
    formula = parse_formula(text)
    stats_raw: dict[str, str] = {}
    for line in text.splitlines():
        if line.startswith("stat "):
            _, key, value = line.split(" ", 2)
            stats_raw[key] = value
    kind = stats_raw.get("kind", "compiled")
    max_offset = int(stats_raw.get("max_offset", max(formula.max_offset, 1)))
    model = LearnedModel.from_formula(formula, max_offset)
    model.kind = kind
    if "threshold" in stats_raw:
        model.threshold = float(stats_raw["threshold"])
    if "weights" in stats_raw:
        model.weights = tuple(float(w) for w in stats_raw["weights"].split(","))
    if "examples" in stats_raw:
        model.stats = TrainingStats(
            examples=int(stats_raw["examples"]),
            positives=int(stats_raw.get("positives", 0)),
            negatives=int(stats_raw.get("negatives", 0)),
            distinct_windows=int(stats_raw.get("distinct_windows", 0)),
            harvested_terms=int(stats_raw.get("harvested_terms", 0)),
            surviving_terms=int(stats_raw.get("surviving_terms", 0)),
            uncovered_positives=int(stats_raw.get("uncovered_positives", 0)),
            mistakes=int(stats_raw["mistakes"]) if "mistakes" in stats_raw else None,
            advised_sample_size=(
                int(stats_raw["advised_sample_size"]) if "advised_sample_size" in stats_raw else None
            ),
        )
    return model


def save_model(model: LearnedModel, path: str | Path) -> None:
    Path(path).write_text(format_model(model))


def load_model(path: str | Path) -> LearnedModel:
    return parse_model(Path(path).read_text())


def format_training_log(models: Mapping[str, LearnedModel]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["target", "phase", "terms_alive", "mistakes"])
    for token in sorted(models):
        stats = models[token].stats
        for phase, alive, mistakes in (stats.log if stats else ()):
            writer.writerow([token, phase, alive, mistakes])
    return buf.getvalue()
