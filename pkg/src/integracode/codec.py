"""Block-sequence encoding of scenes and its two Boolean featurizations.

A scene over N blocks becomes N blocks of `block_size` token slots: slot 1
holds the block's original token (entity name, word, or the filler), the
remaining slots hold unary role tokens. The slotted view packs into a flat bit
sequence; the slot-collapsed presence grid is what the learner consumes, since
slot position carries no meaning under the fixed-order placement policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .relational import (
    FILLER_TOKEN,
    Attribute,
    AugmentedVocabulary,
    Entity,
    GroundAtom,
    Scene,
    VocabularyError,
)


class CodecError(ValueError):
    """Malformed sequences or sequence files."""


class EncodeOverflowError(CodecError):
    """A block needs more augmenting slots than the block size allows."""


@dataclass(frozen=True)
class Block:
    """One block: slot 1 plus augmenting slots, with per-slot provenance."""

    tokens: tuple[str | None, ...]
    predicted: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "predicted", tuple(self.predicted))
        if not self.tokens or self.tokens[0] is None:
            raise CodecError("slot 1 must hold a token")
        if len(self.tokens) != len(self.predicted):
            raise CodecError("token and provenance tuples must align")

    @property
    def original(self) -> str:
        return self.tokens[0]

    def augmenting(self) -> tuple[str, ...]:
        return tuple(t for t in self.tokens[1:] if t is not None)

    def filled_slots(self) -> int:
        return sum(1 for t in self.tokens if t is not None)

    def contains(self, token: str) -> bool:
        return token in self.tokens


@dataclass(frozen=True)
class IntegracodedSequence:
    """N blocks of token slots over an augmented vocabulary.

    Blocks normally hold exactly ``block_size`` slots; inference may extend a
    block past that when predictions no longer fit (such sequences still
    featurize, but cannot be bit-packed).
    """

    blocks: tuple[Block, ...]
    block_size: int
    vocab: AugmentedVocabulary

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.block_size < 1:
            raise CodecError("block size must be >= 1")
        for i, block in enumerate(self.blocks):
            if len(block.tokens) < self.block_size:
                raise CodecError(f"block {i} has {len(block.tokens)} slots, expected >= {self.block_size}")
            for tok in block.tokens:
                if tok is not None and not self.vocab.has_token(tok):
                    raise CodecError(f"block {i}: token {tok!r} not in vocabulary")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def total_slots(self) -> int:
        return sum(len(b.tokens) for b in self.blocks)

    @property
    def overflowed_blocks(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.blocks) if len(b.tokens) > self.block_size)


def encode_scene(scene: Scene, block_size: int, vocab: AugmentedVocabulary) -> IntegracodedSequence:
    """Encode a scene: entity names in slot 1, one role token per atom argument.

    Atoms are placed in a fixed order (attribute name, then argument block
    positions), each token taking the first free slot of its block, so equal
    scenes always produce identical sequences.
    """
    slots: list[list[str]] = []
    for p in range(scene.n_blocks):
        eid = scene.entity_at(p)
        if eid is not None:
            head = scene.name_of(eid)
        else:
            head = scene.block_words.get(p, FILLER_TOKEN)
        vocab.index_original(head)
        slots.append([head])

    def sort_key(atom: GroundAtom):
        return (atom.attribute.name, tuple(scene.positions[a] for a in atom.args))

    for atom in sorted(scene.atoms, key=sort_key):
        declared = vocab.attribute(atom.attribute.name)
        if declared != atom.attribute:
            raise VocabularyError(
                f"attribute {atom.attribute.name}/{atom.attribute.arity} does not match vocabulary arity {declared.arity}"
            )
        for position, eid in enumerate(atom.args, start=1):
            block = scene.positions[eid]
            slots[block].append(atom.attribute.role_token(position))

    blocks = []
    for p, tokens in enumerate(slots):
        if len(tokens) > block_size:
            raise EncodeOverflowError(
                f"block {p} ({tokens[0]}) requires {len(tokens) - 1} augmenting slots; "
                f"block size {block_size} allows {block_size - 1}"
            )
        padded = tokens + [None] * (block_size - len(tokens))
        blocks.append(Block(tuple(padded), (False,) * block_size))
    return IntegracodedSequence(tuple(blocks), block_size, vocab)


@dataclass(frozen=True)
class BitSequence:
    """Flat Boolean view: per block, a |V| one-hot for slot 1 followed by
    (block_size - 1) groups of |V'| presence bits."""

    bits: np.ndarray
    n_blocks: int
    block_size: int
    vocab: AugmentedVocabulary

    def __post_init__(self):
        expected = self.n_blocks * (self.vocab.n_original + (self.block_size - 1) * self.vocab.n_tokens)
        if self.bits.shape != (expected,):
            raise CodecError(f"bit sequence has length {self.bits.shape}, expected ({expected},)")

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


def to_bit_sequence(seq: IntegracodedSequence) -> BitSequence:
    if seq.overflowed_blocks:
        raise CodecError(f"blocks {seq.overflowed_blocks} exceed the block size; cannot bit-pack")
    vocab = seq.vocab
    v, vp, h = vocab.n_original, vocab.n_tokens, seq.block_size
    stride = v + (h - 1) * vp
    bits = np.zeros(seq.n_blocks * stride, dtype=bool)
    for p, block in enumerate(seq.blocks):
        base = p * stride
        bits[base + vocab.index_original(block.original)] = True
        for q in range(1, h):
            tok = block.tokens[q]
            if tok is not None:
                bits[base + v + (q - 1) * vp + vocab.index_token(tok)] = True
    return BitSequence(bits, seq.n_blocks, h, vocab)


@dataclass(frozen=True)
class BlockPresenceFeatures:
    """N x |V'| grid: presence[p][t] iff token t occupies any slot of block p."""

    grid: np.ndarray
    vocab: AugmentedVocabulary

    def __post_init__(self):
        if self.grid.ndim != 2 or self.grid.shape[1] != self.vocab.n_tokens:
            raise CodecError("presence grid must be N x |V'|")
        object.__setattr__(
            self,
            "_ids",
            tuple(tuple(np.flatnonzero(row).tolist()) for row in self.grid),
        )

    @property
    def n_blocks(self) -> int:
        return int(self.grid.shape[0])

    def token_ids(self, block: int) -> tuple[int, ...]:
        return self._ids[block]

    def has(self, block: int, token_index: int) -> bool:
        return bool(self.grid[block, token_index])

    def has_token(self, block: int, token: str) -> bool:
        return bool(self.grid[block, self.vocab.index_token(token)])


def to_block_presence(seq: IntegracodedSequence) -> BlockPresenceFeatures:
    vocab = seq.vocab
    grid = np.zeros((seq.n_blocks, vocab.n_tokens), dtype=bool)
    for p, block in enumerate(seq.blocks):
        for tok in block.tokens:
            if tok is not None:
                grid[p, vocab.index_token(tok)] = True
    return BlockPresenceFeatures(grid, vocab)


def strip_attribute_tokens(seq: IntegracodedSequence, attributes: Iterable[Attribute]) -> IntegracodedSequence:
    """Remove every role token of the given attributes from the augmenting slots."""
    drop = set()
    for attr in attributes:
        drop.update(attr.role_tokens())
    blocks = []
    for block in seq.blocks:
        kept = [(t, p) for t, p in zip(block.tokens[1:], block.predicted[1:]) if t is None or t not in drop]
        kept = [(t, p) for t, p in kept if t is not None]
        width = max(seq.block_size, len(kept) + 1)
        tokens = (block.tokens[0], *(t for t, _ in kept))
        preds = (block.predicted[0], *(p for _, p in kept))
        pad = width - len(tokens)
        blocks.append(Block(tokens + (None,) * pad, preds + (False,) * pad))
    return IntegracodedSequence(tuple(blocks), seq.block_size, seq.vocab)


@dataclass(frozen=True)
class DecodeReport:
    """What decoding could not settle: ambiguous pairings, dangling roles, and
    role tokens stranded on blocks without entities."""

    ambiguous: Mapping[str, tuple[frozenset[GroundAtom], ...]] = field(default_factory=dict)
    incomplete: tuple[tuple[str, int], ...] = ()
    orphaned: tuple[tuple[int, str], ...] = ()

    @property
    def clean(self) -> bool:
        return not (self.ambiguous or self.incomplete or self.orphaned)


_MAX_MATCHINGS = 64


def decode_sequence(seq: IntegracodedSequence) -> tuple[Scene, DecodeReport]:
    """Recover entities and role placements; pair role tokens into atoms when
    the pairing is unique, otherwise report every candidate pairing.

    Exact inverse of `encode_scene` on scenes in which no attribute occurs in
    more than one atom.
    """
    vocab = seq.vocab
    entities: list[Entity] = []
    positions: dict[str, int] = {}
    name_count: dict[str, int] = {}
    entity_blocks: dict[int, str] = {}

    for p, block in enumerate(seq.blocks):
        if block.original != FILLER_TOKEN:
            name_count[block.original] = name_count.get(block.original, 0) + 1
    for p, block in enumerate(seq.blocks):
        name = block.original
        if name == FILLER_TOKEN:
            continue
        eid = name if name_count[name] == 1 else f"{name}@{p}"
        entities.append(Entity(eid, name))
        positions[eid] = p
        entity_blocks[p] = eid

    placements: dict[str, dict[int, list[int]]] = {}
    orphaned: list[tuple[int, str]] = []
    for p, block in enumerate(seq.blocks):
        for tok in block.tokens[1:]:
            if tok is None:
                continue
            role = vocab.role_of(tok)
            if role is None:
                continue
            if p not in entity_blocks:
                orphaned.append((p, tok))
                continue
            attr, position = role
            placements.setdefault(attr.name, {}).setdefault(position, []).append(p)

    atoms: set[GroundAtom] = set()
    ambiguous: dict[str, tuple[frozenset[GroundAtom], ...]] = {}
    incomplete: list[tuple[str, int]] = []
    for attr_name in sorted(placements):
        attr = vocab.attribute(attr_name)
        by_role = placements[attr_name]
        missing = [r for r in range(1, attr.arity + 1) if r not in by_role]
        if missing:
            incomplete.extend((attr_name, r) for r in missing)
            continue
        lists = [sorted(by_role[r]) for r in range(1, attr.arity + 1)]
        counts = {len(lst) for lst in lists}
        if attr.arity == 1:
            atoms.update(GroundAtom(attr, (entity_blocks[p],)) for p in lists[0])
            continue
        if len(counts) != 1:
            incomplete.extend(
                (attr_name, r) for r in range(1, attr.arity + 1) if len(lists[r - 1]) != max(counts)
            )
            continue
        matchings: set[frozenset[GroundAtom]] = set()
        perm_sets = [sorted(set(itertools.permutations(lst))) for lst in lists[1:]]
        for combo in itertools.product(*perm_sets):
            rows = zip(lists[0], *combo)
            matchings.add(
                frozenset(GroundAtom(attr, tuple(entity_blocks[p] for p in row)) for row in rows)
            )
            if len(matchings) > _MAX_MATCHINGS:
                break
        if len(matchings) == 1:
            atoms.update(next(iter(matchings)))
        else:
            ambiguous[attr_name] = tuple(sorted(matchings, key=lambda s: sorted(map(repr, s))))

    scene = Scene(tuple(entities), frozenset(atoms), positions, seq.n_blocks)
    report = DecodeReport(dict(ambiguous), tuple(incomplete), tuple(orphaned))
    return scene, report


# ---------------------------------------------------------------------------
# Sequence file format: one block per line, slot tokens separated by tabs,
# empty slots written `_`, predicted tokens suffixed `*`.

def format_sequence(seq: IntegracodedSequence) -> str:
    lines = []
    for block in seq.blocks:
        cells = []
        for tok, pred in zip(block.tokens, block.predicted):
            if tok is None:
                cells.append("_")
            else:
                cells.append(tok + "*" if pred else tok)
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def parse_sequence(
    text: str, vocab: AugmentedVocabulary, block_size: int | None = None
) -> IntegracodedSequence:
    rows = [line.split("\t") for line in text.splitlines() if line.strip()]
    if not rows:
        raise CodecError("empty sequence file")
    if block_size is None:
        # overflowed blocks are longer than the block size, so take the minimum
        block_size = min(len(r) for r in rows)
    blocks = []
    for i, cells in enumerate(rows):
        tokens: list[str | None] = []
        preds: list[bool] = []
        for j, cell in enumerate(cells):
            if cell == "_" and j > 0:
                tokens.append(None)
                preds.append(False)
                continue
            pred = cell.endswith("*")
            tokens.append(cell[:-1] if pred else cell)
            preds.append(pred)
        blocks.append(Block(tuple(tokens), tuple(preds)))
    return IntegracodedSequence(tuple(blocks), block_size, vocab)


def save_sequence(seq: IntegracodedSequence, path: str | Path) -> None:
    Path(path).write_text(format_sequence(seq))


def load_sequence(
    path: str | Path, vocab: AugmentedVocabulary, block_size: int | None = None
) -> IntegracodedSequence:
    return parse_sequence(Path(path).read_text(), vocab, block_size)


# ---------------------------------------------------------------------------
# Scene dataset format: one scene per line, `; `-separated entries.
#   N <blocks>  E <id> <name> <pos>  W <pos> <word>  A <attr> <id>...

def format_scene(scene: Scene) -> str:
    entries = [f"N {scene.n_blocks}"]
    for e in sorted(scene.entities, key=lambda e: scene.positions[e.eid]):
        entries.append(f"E {e.eid} {e.name} {scene.positions[e.eid]}")
    for pos in sorted(scene.block_words):
        entries.append(f"W {pos} {scene.block_words[pos]}")
    for atom in sorted(scene.atoms, key=lambda a: (a.attribute.name, a.args)):
        entries.append(f"A {atom.attribute.name} {' '.join(atom.args)}")
    return "; ".join(entries)


def parse_scene(line: str, vocab: AugmentedVocabulary) -> Scene:
    entities: list[Entity] = []
    positions: dict[str, int] = {}
    block_words: dict[int, str] = {}
    atoms: set[GroundAtom] = set()
    n_blocks: int | None = None
    for entry in line.split(";"):
        entry = entry.strip()
        if not entry:
            continue
        parts = entry.split()
        kind = parts[0]
        if kind == "N" and len(parts) == 2:
            n_blocks = int(parts[1])
        elif kind == "E" and len(parts) == 4:
            entities.append(Entity(parts[1], parts[2]))
            positions[parts[1]] = int(parts[3])
        elif kind == "W" and len(parts) == 3:
            block_words[int(parts[1])] = parts[2]
        elif kind == "A" and len(parts) >= 2:
            atoms.add(GroundAtom(vocab.attribute(parts[1]), tuple(parts[2:])))
        else:
            raise CodecError(f"bad scene entry {entry!r}")
    if n_blocks is None:
        n_blocks = max(
            [positions[e.eid] for e in entities] + list(block_words), default=-1
        ) + 1
    return Scene(tuple(entities), frozenset(atoms), positions, n_blocks, block_words)


def format_scenes(scenes: Iterable[Scene]) -> str:
    return "\n".join(format_scene(s) for s in scenes) + "\n"


def parse_scenes(text: str, vocab: AugmentedVocabulary) -> list[Scene]:
    return [parse_scene(line, vocab) for line in text.splitlines() if line.strip()]


def save_scenes(scenes: Iterable[Scene], path: str | Path) -> None:
    Path(path).write_text(format_scenes(scenes))


def load_scenes(path: str | Path, vocab: AugmentedVocabulary) -> list[Scene]:
    return parse_scenes(Path(path).read_text(), vocab)
