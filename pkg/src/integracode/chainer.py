"""Classifier calls that output augmenting tokens, and chains of them.

Each call evaluates every model against a snapshot of the input sequence and
appends the fired target tokens, marked as predicted; input tokens are never
removed, so augmentation is monotone. Chaining feeds each stage's output to
the next with no fixpoint iteration inside a stage; multi-round derivations
are longer pipelines. Regions where some role token repeats within a radius
can be abstained from entirely, trading coverage for false positives.

The chained-accuracy guarantee is the union bound over per-stage error:
1 - sum(1 - a_i), floored at zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .codec import Block, IntegracodedSequence, to_block_presence
from .learner import LearnedModel, load_model, save_model


class ChainError(ValueError):
    pass


def soundness_bound(accuracies: Sequence[float]) -> float:
    """Union-bound floor on the accuracy of a conclusion chained through
    stages of the given measured accuracies."""
    for a in accuracies:
        if not 0.0 <= a <= 1.0:
            raise ChainError(f"accuracy {a} outside [0, 1]")
    return max(0.0, 1.0 - sum(1.0 - a for a in accuracies))


@dataclass(frozen=True)
class Stage:
    """One classifier call: a model per target token plus its measured
    holdout accuracy, recorded before chaining."""

    models: Mapping[str, LearnedModel]
    accuracy: float

    def __post_init__(self):
        object.__setattr__(self, "models", dict(self.models))
        if not 0.0 <= self.accuracy <= 1.0:
            raise ChainError(f"stage accuracy {self.accuracy} outside [0, 1]")


@dataclass(frozen=True)
class StagePipeline:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def accuracies(self) -> tuple[float, ...]:
        return tuple(s.accuracy for s in self.stages)

    def soundness_bound(self) -> float:
        return soundness_bound(self.accuracies)


@dataclass(frozen=True)
class TraceEntry:
    stage: int
    block: int
    token: str
    term: tuple[tuple[int, str], ...]
    source_blocks: tuple[int, ...]


@dataclass(frozen=True)
class ChainTrace:
    entries: tuple[TraceEntry, ...]
    abstained: tuple[frozenset[int], ...] = ()

    def entry_for(self, block: int, token: str) -> TraceEntry | None:
        for e in self.entries:
            if e.block == block and e.token == token:
                return e
        return None


def detect_repeated_relations(seq: IntegracodedSequence, radius: int) -> frozenset[int]:
    """Blocks within `radius` of two or more occurrences of the same role
    token of some multi-argument attribute."""
    if radius < 1:
        raise ChainError("radius must be >= 1")
    occurrences: dict[str, list[int]] = {}
    for p, block in enumerate(seq.blocks):
        for tok in set(block.tokens[1:]):
            if tok is None:
                continue
            role = seq.vocab.role_of(tok)
            if role is not None and role[0].arity >= 2:
                occurrences.setdefault(tok, []).append(p)
    flagged: set[int] = set()
    for positions in occurrences.values():
        if len(positions) < 2:
            continue
        for b in range(seq.n_blocks):
            if sum(1 for p in positions if abs(p - b) <= radius) >= 2:
                flagged.add(b)
    return frozenset(flagged)


def _append_token(block: Block, token: str) -> Block:
    tokens = list(block.tokens)
    preds = list(block.predicted)
    for i in range(1, len(tokens)):
        if tokens[i] is None:
            tokens[i] = token
            preds[i] = True
            return Block(tuple(tokens), tuple(preds))
    # block full: extend past the block size (inference-side relaxation)
    return Block(tuple(tokens) + (token,), tuple(preds) + (True,))


def classify_call(
    seq: IntegracodedSequence,
    models: Mapping[str, LearnedModel],
    abstain: bool = False,
    radius: int | None = None,
    stage_index: int = 0,
) -> tuple[IntegracodedSequence, tuple[TraceEntry, ...], frozenset[int]]:
    """Run one classifier call: every fired target token is appended to its
    block, marked predicted. With `abstain`, flagged repeated-relation regions
    receive no predictions at all. Returns (sequence, trace entries, flagged).
    """
    flagged: frozenset[int] = frozenset()
    if abstain:
        r = radius if radius is not None else max(m.max_offset for m in models.values())
        flagged = detect_repeated_relations(seq, r)
    features = to_block_presence(seq)
    additions: list[tuple[int, str, tuple[tuple[int, str], ...]]] = []
    for token in sorted(models):
        model = models[token]
        for block in range(seq.n_blocks):
            if block in flagged:
                continue
            if seq.blocks[block].contains(token):
                continue
            term = model.predict_with_term(features, block)
            if term is not None:
                additions.append((block, token, term))

    blocks = list(seq.blocks)
    entries = []
    for block, token, term in additions:
        blocks[block] = _append_token(blocks[block], token)
        sources = tuple(sorted({block + d for d, _ in term}))
        entries.append(TraceEntry(stage_index, block, token, term, sources))
    out = IntegracodedSequence(tuple(blocks), seq.block_size, seq.vocab)
    return out, tuple(entries), flagged


def chain(
    seq: IntegracodedSequence,
    pipeline: StagePipeline,
    abstain: bool = False,
    radius: int | None = None,
) -> tuple[IntegracodedSequence, ChainTrace]:
    """Apply the pipeline stage by stage, each stage reading the previous
    stage's output; the trace records one entry per predicted token."""
    current = seq
    all_entries: list[TraceEntry] = []
    abstained: list[frozenset[int]] = []
    for i, stage in enumerate(pipeline.stages):
        current, entries, flagged = classify_call(
            current, stage.models, abstain=abstain, radius=radius, stage_index=i
        )
        all_entries.extend(entries)
        abstained.append(flagged)
    return current, ChainTrace(tuple(all_entries), tuple(abstained))


# ---------------------------------------------------------------------------
# Pipeline manifests: JSON listing per-stage model files and accuracies.

def save_pipeline(pipeline: StagePipeline, directory: str | Path, name: str = "pipeline") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"stages": []}
    for i, stage in enumerate(pipeline.stages):
        files = []
        for token in sorted(stage.models):
            fname = f"{name}_stage{i}_{token.replace('^', '_')}.model"
            save_model(stage.models[token], directory / fname)
            files.append(fname)
        manifest["stages"].append({"models": files, "accuracy": stage.accuracy})
    path = directory / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_pipeline(manifest_path: str | Path) -> StagePipeline:
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    stages = []
    for entry in data["stages"]:
        models = {}
        for fname in entry["models"]:
            model = load_model(manifest_path.parent / fname)
            models[model.target_token] = model
        stages.append(Stage(models, float(entry["accuracy"])))
    return StagePipeline(tuple(stages))


def format_trace(trace: ChainTrace) -> str:
    lines = []
    for e in trace.entries:
        term = " ".join(f"({d},{tok})" for d, tok in e.term)
        sources = ",".join(str(b) for b in e.source_blocks)
        lines.append(f"{e.block}\t{e.token}\tstage={e.stage}\tterm={term}\tsources={sources}")
    for i, flagged in enumerate(trace.abstained):
        if flagged:
            lines.append(f"# stage {i} abstained blocks: {','.join(map(str, sorted(flagged)))}")
    return "\n".join(lines) + "\n"


def save_trace(trace: ChainTrace, path: str | Path) -> None:
    Path(path).write_text(format_trace(trace))
