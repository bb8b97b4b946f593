"""Deterministic controlled-language frontend: tiny texts to scenes.

The grammar is one clause per sentence with a closed lexicon:

    <Subject> <verb> <Object>.     (transitive verb, arity-2 attribute)
    <Subject> <verb>.              (intransitive verb, arity-1 attribute)

where a subject or object is a declared name or a pronoun. Token indices
(counting words across the whole text) double as block positions. Identical
names corefer to the first mention; a pronoun binds to the most recent
gender-compatible name, and is kept as a fresh entity (flagged unresolved)
when no antecedent exists. Merged-away mentions and verbs keep their surface
word in slot 1 of their block, as the raw text would.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .codec import Block, IntegracodedSequence
from .relational import (
    Attribute,
    AugmentedVocabulary,
    Entity,
    FILLER_TOKEN,
    GroundAtom,
    Scene,
    define_vocabulary,
)

NEAR = Attribute("Near", 2)
NOUN = Attribute("Noun", 1)
VERB = Attribute("Verb", 1)


class ParseError(ValueError):
    def __init__(self, message: str, sentence: int | None = None, word: str | None = None):
        where = f" (sentence {sentence}" + (f", at {word!r})" if word else ")") if sentence else ""
        super().__init__(message + where)
        self.sentence = sentence
        self.word = word


@dataclass(frozen=True)
class Lexicon:
    """Closed word list: verbs map to attributes, names and pronouns carry a
    gender tag (m/f)."""

    verbs: Mapping[str, Attribute]
    names: Mapping[str, str]
    pronouns: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "verbs", dict(self.verbs))
        object.__setattr__(self, "names", dict(self.names))
        object.__setattr__(self, "pronouns", dict(self.pronouns))
        overlap = (set(self.verbs) & set(self.names)) | (set(self.verbs) & set(self.pronouns)) | (
            set(self.names) & set(self.pronouns)
        )
        if overlap:
            raise ParseError(f"words declared in two lexicon classes: {sorted(overlap)}")


def default_lexicon() -> Lexicon:
    return Lexicon(
        verbs={
            "insulted": Attribute("Insulted", 2),
            "likes": Attribute("Likes", 2),
            "meets": Attribute("Meets", 2),
            "revenged": Attribute("Revenges", 2),
            "fled": Attribute("Fled", 1),
            "slept": Attribute("Slept", 1),
        },
        names={
            "Bob": "m", "Joe": "m", "Bill": "m", "Carl": "m", "Odysseus": "m",
            "Sue": "f", "Joan": "f", "Penelope": "f", "Amy": "f",
        },
        pronouns={"he": "m", "she": "f"},
    )


def build_vocabulary(lexicon: Lexicon, linguistic: bool = False) -> AugmentedVocabulary:
    """Vocabulary for encoding parsed texts: names and pronouns are entity
    tokens, verb words plain original tokens, verb attributes contribute the
    role tokens. `linguistic` adds the proximity and part-of-speech attributes
    used by `augment_linguistic`."""
    attrs: dict[str, Attribute] = {}
    for word, attr in lexicon.verbs.items():
        prior = attrs.get(attr.name)
        if prior is not None and prior != attr:
            raise ParseError(f"attribute {attr.name} declared with two arities")
        attrs[attr.name] = attr
    if linguistic:
        for attr in (NEAR, NOUN, VERB):
            attrs[attr.name] = attr
    return define_vocabulary(
        entity_names=tuple(lexicon.names) + tuple(lexicon.pronouns),
        attributes=tuple(attrs.values()),
        extra_tokens=tuple(lexicon.verbs),
    )


@dataclass(frozen=True)
class Mention:
    index: int
    word: str
    kind: str  # name | pronoun
    gender: str


@dataclass(frozen=True)
class ParsedText:
    scene: Scene
    words: tuple[str, ...]
    entity_of_index: Mapping[int, str]
    unresolved: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entity_of_index", dict(self.entity_of_index))


def resolve_coreference(mentions: Sequence[Mention]) -> tuple[dict[int, str], tuple[int, ...]]:
    """Merge map from mention index to entity id.

    Identical names share one entity; a pronoun binds to the most recent
    gender-compatible name mention before it, or becomes a fresh entity
    (reported unresolved) when none exists.
    """
    assignment: dict[int, str] = {}
    unresolved: list[int] = []
    seen_names: list[Mention] = []
    for m in mentions:
        if m.kind == "name":
            assignment[m.index] = m.word
            seen_names.append(m)
        else:
            antecedent = next((n for n in reversed(seen_names) if n.gender == m.gender), None)
            if antecedent is None:
                assignment[m.index] = f"{m.word}@{m.index}"
                unresolved.append(m.index)
            else:
                assignment[m.index] = antecedent.word
    return assignment, tuple(unresolved)


def parse_controlled_text(text: str, lexicon: Lexicon | None = None) -> ParsedText:
    """Parse into a scene positioned by token index, with coreference applied."""
    lexicon = lexicon if lexicon is not None else default_lexicon()
    sentences = [s.strip() for s in text.split(".")]
    if sentences and sentences[-1] == "":
        sentences = sentences[:-1]

    words: list[str] = []
    mentions: list[Mention] = []
    clauses: list[tuple[int, str, int | None]] = []  # (subject idx, verb word, object idx)

    def classify(word: str, sentence_no: int) -> Mention | None:
        if word in lexicon.names:
            return Mention(len(words), word, "name", lexicon.names[word])
        if word in lexicon.pronouns:
            return Mention(len(words), word, "pronoun", lexicon.pronouns[word])
        if word in lexicon.verbs:
            return None
        raise ParseError(f"unknown word {word!r}", sentence_no, word)

    for no, sentence in enumerate(sentences, start=1):
        if not sentence:
            raise ParseError("empty sentence", no)
        parts = sentence.split()
        if len(parts) not in (2, 3):
            raise ParseError(
                "expected '<Subject> <verb> <Object>.' or '<Subject> <verb>.'", no
            )
        subject = classify(parts[0], no)
        if subject is None:
            raise ParseError(f"expected a name or pronoun, got the verb {parts[0]!r}", no, parts[0])
        mentions.append(subject)
        words.append(parts[0])

        verb = parts[1]
        if verb not in lexicon.verbs:
            raise ParseError(f"expected a verb, got {verb!r}", no, verb)
        attr = lexicon.verbs[verb]
        verb_index = len(words)
        words.append(verb)

        obj: Mention | None = None
        if len(parts) == 3:
            if attr.arity != 2:
                raise ParseError(f"verb {verb!r} is intransitive; expected '<Subject> <verb>.'", no, verb)
            obj = classify(parts[2], no)
            if obj is None:
                raise ParseError(f"expected a name or pronoun, got the verb {parts[2]!r}", no, parts[2])
            mentions.append(obj)
            words.append(parts[2])
        elif attr.arity == 2:
            raise ParseError(f"verb {verb!r} is transitive; expected '<Subject> <verb> <Object>.'", no, verb)
        clauses.append((subject.index, verb, obj.index if obj else None))

    assignment, unresolved = resolve_coreference(mentions)

    first_mention: dict[str, int] = {}
    mention_word: dict[str, str] = {}
    for m in mentions:
        eid = assignment[m.index]
        first_mention.setdefault(eid, m.index)
        mention_word.setdefault(eid, m.word)

    entities = tuple(
        Entity(eid, mention_word[eid]) for eid in sorted(first_mention, key=first_mention.get)
    )
    positions = {eid: first_mention[eid] for eid in first_mention}
    block_words: dict[int, str] = {}
    for i, word in enumerate(words):
        if i in positions.values():
            continue
        block_words[i] = word

    atoms: set[GroundAtom] = set()
    for subject_idx, verb, object_idx in clauses:
        attr = lexicon.verbs[verb]
        if object_idx is None:
            atoms.add(GroundAtom(attr, (assignment[subject_idx],)))
        else:
            atoms.add(GroundAtom(attr, (assignment[subject_idx], assignment[object_idx])))

    scene = Scene(entities, frozenset(atoms), positions, len(words), block_words)
    return ParsedText(scene, tuple(words), dict(assignment), unresolved)


def augment_linguistic(
    seq: IntegracodedSequence, near_threshold: int, lexicon: Lexicon | None = None
) -> IntegracodedSequence:
    """Add analyzer-style tokens: a part-of-speech token per word block, and
    proximity role tokens for every pair of word blocks within the threshold."""
    if near_threshold < 1:
        raise ParseError("near threshold must be >= 1")
    lexicon = lexicon if lexicon is not None else default_lexicon()
    for attr in (NEAR, NOUN, VERB):
        for tok in attr.role_tokens():
            if not seq.vocab.has_token(tok):
                raise ParseError(
                    f"vocabulary lacks {tok!r}; build it with build_vocabulary(..., linguistic=True)"
                )
    additions: dict[int, list[str]] = {}
    word_blocks: list[int] = []
    for p, block in enumerate(seq.blocks):
        head = block.original
        if head == FILLER_TOKEN:
            continue
        word_blocks.append(p)
        if head in lexicon.names or head in lexicon.pronouns:
            additions.setdefault(p, []).append(NOUN.role_token(1))
        elif head in lexicon.verbs:
            additions.setdefault(p, []).append(VERB.role_token(1))
    for a_pos in range(len(word_blocks)):
        for b_pos in range(a_pos + 1, len(word_blocks)):
            p, q = word_blocks[a_pos], word_blocks[b_pos]
            if q - p > near_threshold:
                break
            additions.setdefault(p, []).append(NEAR.role_token(1))
            additions.setdefault(q, []).append(NEAR.role_token(2))

    blocks = []
    for p, block in enumerate(seq.blocks):
        tokens = list(block.tokens)
        preds = list(block.predicted)
        for tok in additions.get(p, ()):
            placed = False
            for i in range(1, len(tokens)):
                if tokens[i] is None:
                    tokens[i], preds[i] = tok, False
                    placed = True
                    break
            if not placed:
                tokens.append(tok)
                preds.append(False)
        blocks.append(Block(tuple(tokens), tuple(preds)))
    return IntegracodedSequence(tuple(blocks), seq.block_size, seq.vocab)


# ---------------------------------------------------------------------------
# Lexicon files: `verb insulted Insulted 2`, `name Bob m`, `pronoun he m`.

def format_lexicon(lexicon: Lexicon) -> str:
    lines = [f"verb {w} {a.name} {a.arity}" for w, a in sorted(lexicon.verbs.items())]
    lines += [f"name {w} {g}" for w, g in sorted(lexicon.names.items())]
    lines += [f"pronoun {w} {g}" for w, g in sorted(lexicon.pronouns.items())]
    return "\n".join(lines) + "\n"


def parse_lexicon(text: str) -> Lexicon:
    verbs: dict[str, Attribute] = {}
    names: dict[str, str] = {}
    pronouns: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "verb" and len(parts) == 4:
            verbs[parts[1]] = Attribute(parts[2], int(parts[3]))
        elif parts[0] == "name" and len(parts) == 3:
            names[parts[1]] = parts[2]
        elif parts[0] == "pronoun" and len(parts) == 3:
            pronouns[parts[1]] = parts[2]
        else:
            raise ParseError(f"line {lineno}: expected 'verb <w> <attr> <arity>', 'name <w> <g>', or 'pronoun <w> <g>'")
    return Lexicon(verbs, names, pronouns)


def save_lexicon(lexicon: Lexicon, path: str | Path) -> None:
    Path(path).write_text(format_lexicon(lexicon))


def load_lexicon(path: str | Path) -> Lexicon:
    return parse_lexicon(Path(path).read_text())
