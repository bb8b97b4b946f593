"""Scenes, vocabularies, and approximate-equivalence rules over relational atoms.

Plain data plus brute-force evaluation. Everything downstream (the block
encoder, the formula compiler, the learners) is tested against the semantics
defined here, so evaluation favors obviousness over speed: existential search
is exhaustive over the entities of a scene.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

# Reserved original token for blocks that carry neither an entity nor a word.
FILLER_TOKEN = "_"

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")


class VocabularyError(ValueError):
    """Malformed or conflicting vocabulary declarations."""


class RuleError(ValueError):
    """Malformed expressions or rules, or invalid rule applications."""


@dataclass(frozen=True, order=True)
class Attribute:
    """A relation symbol with a fixed arity (arity 1 covers plain properties)."""

    name: str
    arity: int

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise VocabularyError(f"bad attribute name {self.name!r}")
        if self.arity < 1:
            raise VocabularyError(f"attribute {self.name}: arity must be >= 1")

    def role_token(self, position: int) -> str:
        """Unary token for 1-based argument slot; arity-1 attributes reuse their name."""
        if not 1 <= position <= self.arity:
            raise ValueError(f"{self.name}: role {position} outside 1..{self.arity}")
        return self.name if self.arity == 1 else f"{self.name}^{position}"

    def role_tokens(self) -> tuple[str, ...]:
        return tuple(self.role_token(p) for p in range(1, self.arity + 1))


@dataclass(frozen=True)
class AugmentedVocabulary:
    """Original tokens plus the unary role tokens contributed by the attributes.

    Original tokens are entity names, arity-1 attribute names, any extra words,
    and the reserved filler. Every arity-r attribute with r >= 2 contributes
    role tokens ``A^1 .. A^r``. Token order is canonical: lexicographic by base
    name, then role index, so bit layouts are reproducible.
    """

    entity_names: tuple[str, ...]
    attributes: tuple[Attribute, ...]
    extra_tokens: tuple[str, ...] = ()

    original_tokens: tuple[str, ...] = field(init=False, repr=False, compare=False)
    all_tokens: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entity_names", tuple(sorted(self.entity_names)))
        object.__setattr__(self, "attributes", tuple(sorted(self.attributes)))
        object.__setattr__(self, "extra_tokens", tuple(sorted(self.extra_tokens)))

        originals = set(self.entity_names) | set(self.extra_tokens) | {FILLER_TOKEN}
        originals.update(a.name for a in self.attributes if a.arity == 1)
        object.__setattr__(self, "original_tokens", tuple(sorted(originals)))

        keyed = [(tok, 0, tok) for tok in self.original_tokens]
        for attr in self.attributes:
            if attr.arity >= 2:
                keyed.extend((attr.name, p, attr.role_token(p)) for p in range(1, attr.arity + 1))
        ordered = tuple(tok for _, _, tok in sorted(keyed))
        object.__setattr__(self, "all_tokens", ordered)

        object.__setattr__(self, "_original_index", {t: i for i, t in enumerate(self.original_tokens)})
        object.__setattr__(self, "_token_index", {t: i for i, t in enumerate(ordered)})
        object.__setattr__(self, "_attr_by_name", {a.name: a for a in self.attributes})
        roles = {}
        for attr in self.attributes:
            for p in range(1, attr.arity + 1):
                roles[attr.role_token(p)] = (attr, p)
        object.__setattr__(self, "_role_map", roles)

    @property
    def n_original(self) -> int:
        return len(self.original_tokens)

    @property
    def n_tokens(self) -> int:
        return len(self.all_tokens)

    @property
    def expansion_ratio(self) -> Fraction:
        return Fraction(self.n_tokens, self.n_original)

    def has_token(self, token: str) -> bool:
        return token in self._token_index

    def index_original(self, token: str) -> int:
        try:
            return self._original_index[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} is not an original token") from None

    def index_token(self, token: str) -> int:
        try:
            return self._token_index[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} is not in the vocabulary") from None

    def attribute(self, name: str) -> Attribute:
        try:
            return self._attr_by_name[name]
        except KeyError:
            raise VocabularyError(f"unknown attribute {name!r}") from None

    def role_of(self, token: str) -> tuple[Attribute, int] | None:
        """(attribute, 1-based argument position) if `token` is a role token."""
        return self._role_map.get(token)


def define_vocabulary(
    entity_names: Iterable[str],
    attributes: Iterable[Attribute],
    extra_tokens: Iterable[str] = (),
) -> AugmentedVocabulary:
    """Build a vocabulary, rejecting duplicate or reserved names by name."""
    seen: set[str] = set()
    entity_names = tuple(entity_names)
    attributes = tuple(attributes)
    extra_tokens = tuple(extra_tokens)
    for name in itertools.chain(entity_names, (a.name for a in attributes)):
        if name == FILLER_TOKEN:
            raise VocabularyError(f"name {name!r} is reserved for empty blocks")
        if not _NAME_RE.match(name):
            raise VocabularyError(f"bad name {name!r}")
        if name in seen:
            raise VocabularyError(f"duplicate name {name!r}")
        seen.add(name)
    for word in extra_tokens:
        if word == FILLER_TOKEN or not _NAME_RE.match(word):
            raise VocabularyError(f"bad extra token {word!r}")
        # extra words may repeat entity/attribute names only if identical role
        if word in seen:
            raise VocabularyError(f"duplicate name {word!r}")
    return AugmentedVocabulary(entity_names, attributes, extra_tokens)


def format_vocabulary(vocab: AugmentedVocabulary) -> str:
    lines = [f"entity {n}" for n in vocab.entity_names]
    lines += [f"attr {a.name} {a.arity}" for a in vocab.attributes]
    lines += [f"word {w}" for w in vocab.extra_tokens]
    return "\n".join(lines) + "\n"


def parse_vocabulary(text: str) -> AugmentedVocabulary:
    entities: list[str] = []
    attrs: list[Attribute] = []
    words: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "entity" and len(parts) == 2:
            entities.append(parts[1])
        elif parts[0] == "attr" and len(parts) == 3:
            attrs.append(Attribute(parts[1], int(parts[2])))
        elif parts[0] == "word" and len(parts) == 2:
            words.append(parts[1])
        else:
            raise VocabularyError(f"line {lineno}: expected 'entity <name>', 'attr <name> <arity>', or 'word <token>'")
    return define_vocabulary(entities, attrs, words)


def save_vocabulary(vocab: AugmentedVocabulary, path: str | Path) -> None:
    Path(path).write_text(format_vocabulary(vocab))


def load_vocabulary(path: str | Path) -> AugmentedVocabulary:
    return parse_vocabulary(Path(path).read_text())


@dataclass(frozen=True)
class GroundAtom:
    attribute: Attribute
    args: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != self.attribute.arity:
            raise RuleError(
                f"{self.attribute.name}/{self.attribute.arity} applied to {len(self.args)} arguments"
            )

    def __repr__(self):
        return f"{self.attribute.name}({','.join(self.args)})"


@dataclass(frozen=True)
class Entity:
    eid: str
    name: str


@dataclass(frozen=True)
class Scene:
    """Entities with ground atoms and an injective entity -> block position map.

    ``block_words`` optionally records original tokens (e.g. verbs from a
    parsed text) occupying blocks that hold no entity.
    """

    entities: tuple[Entity, ...]
    atoms: frozenset[GroundAtom]
    positions: Mapping[str, int]
    n_blocks: int
    block_words: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "atoms", frozenset(self.atoms))
        object.__setattr__(self, "positions", dict(self.positions))
        object.__setattr__(self, "block_words", dict(self.block_words))
        ids = [e.eid for e in self.entities]
        if len(set(ids)) != len(ids):
            raise RuleError("duplicate entity ids in scene")
        if set(self.positions) != set(ids):
            raise RuleError("positions must cover exactly the scene entities")
        if self.n_blocks < len(self.entities):
            raise RuleError("scene needs at least one block per entity")
        taken = list(self.positions.values())
        if len(set(taken)) != len(taken):
            raise RuleError("positions must be injective")
        for pos in taken:
            if not 0 <= pos < self.n_blocks:
                raise RuleError(f"position {pos} outside [0, {self.n_blocks})")
        for pos, word in self.block_words.items():
            if pos in set(taken):
                raise RuleError(f"block {pos} holds both an entity and a word")
            if not 0 <= pos < self.n_blocks:
                raise RuleError(f"word position {pos} outside [0, {self.n_blocks})")
        names = {e.eid: e.name for e in self.entities}
        for atom in self.atoms:
            for arg in atom.args:
                if arg not in names:
                    raise RuleError(f"atom {atom} mentions unknown entity {arg!r}")
        object.__setattr__(self, "_name_of", names)
        object.__setattr__(self, "_entity_at", {self.positions[e]: e for e in self.positions})

    @property
    def entity_ids(self) -> tuple[str, ...]:
        return tuple(e.eid for e in self.entities)

    def name_of(self, eid: str) -> str:
        return self._name_of[eid]

    def entity_at(self, position: int) -> str | None:
        return self._entity_at.get(position)

    def with_atoms(self, extra: Iterable[GroundAtom]) -> "Scene":
        return Scene(self.entities, self.atoms | set(extra), self.positions, self.n_blocks, self.block_words)


def make_scene(
    entity_positions: Mapping[str, int],
    atoms: Iterable[tuple[Attribute, Sequence[str]]] | Iterable[GroundAtom],
    n_blocks: int | None = None,
    block_words: Mapping[int, str] | None = None,
) -> Scene:
    """Convenience constructor for scenes whose entity ids equal their names."""
    entities = tuple(Entity(name, name) for name in sorted(entity_positions))
    ground = set()
    for atom in atoms:
        if isinstance(atom, GroundAtom):
            ground.add(atom)
        else:
            attr, args = atom
            ground.add(GroundAtom(attr, tuple(args)))
    if n_blocks is None:
        n_blocks = max(entity_positions.values(), default=-1) + 1
        if block_words:
            n_blocks = max(n_blocks, max(block_words) + 1)
    return Scene(entities, frozenset(ground), dict(entity_positions), n_blocks, dict(block_words or {}))


@dataclass(frozen=True)
class ConjunctiveExpression:
    """Conjunction of relation atoms over distinct free and existential variables.

    Distinct variables always denote distinct entities. Every declared variable
    must occur in some atom; otherwise truth would depend on entities the
    expression never constrains.
    """

    atoms: tuple[tuple[Attribute, tuple[str, ...]], ...]
    free_vars: tuple[str, ...]
    existential_vars: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "atoms", tuple((a, tuple(vs)) for a, vs in self.atoms)
        )
        object.__setattr__(self, "free_vars", tuple(self.free_vars))
        object.__setattr__(self, "existential_vars", tuple(self.existential_vars))
        declared = set(self.free_vars) | set(self.existential_vars)
        if len(declared) != len(self.free_vars) + len(self.existential_vars):
            raise RuleError("free and existential variables must be disjoint and unique")
        used: set[str] = set()
        for attr, vs in self.atoms:
            if len(vs) != attr.arity:
                raise RuleError(f"{attr.name}/{attr.arity} used with {len(vs)} variables")
            for v in vs:
                if v not in declared:
                    raise RuleError(f"variable {v!r} is neither free nor existential")
            used.update(vs)
        missing = declared - used
        if missing:
            raise RuleError(f"declared variables never used in atoms: {sorted(missing)}")

    @property
    def arity_sum(self) -> int:
        return sum(attr.arity for attr, _ in self.atoms)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.free_vars + self.existential_vars


@dataclass(frozen=True)
class CoreRule:
    """Disjunction of conjunctive expressions approximately equivalent to a target atom.

    ``rhs_args`` maps target argument positions to shared free variables; every
    disjunct's existential quantifiers are scoped independently.
    """

    lhs: tuple[ConjunctiveExpression, ...]
    rhs: Attribute
    rhs_args: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "lhs", tuple(self.lhs))
        object.__setattr__(self, "rhs_args", tuple(self.rhs_args))
        if not self.lhs:
            raise RuleError("rule needs at least one disjunct")
        if len(self.rhs_args) != self.rhs.arity:
            raise RuleError(f"rhs {self.rhs.name}/{self.rhs.arity} given {len(self.rhs_args)} arguments")
        if len(set(self.rhs_args)) != len(self.rhs_args):
            raise RuleError("rhs argument variables must be distinct")
        signature = set(self.rhs_args)
        for expr in self.lhs:
            if set(expr.free_vars) != signature:
                raise RuleError(
                    f"disjunct free variables {sorted(expr.free_vars)} do not match rhs map {sorted(signature)}"
                )

    @property
    def max_arity_sum(self) -> int:
        return max(expr.arity_sum for expr in self.lhs)


def eval_conjunctive(scene: Scene, expr: ConjunctiveExpression, binding: Mapping[str, str]) -> bool:
    """True iff some assignment of distinct fresh entities to the existential
    variables makes every atom a member of the scene."""
    if set(binding) != set(expr.free_vars):
        missing = set(expr.free_vars) - set(binding)
        extra = set(binding) - set(expr.free_vars)
        raise RuleError(f"binding mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    bound = list(binding.values())
    if len(set(bound)) != len(bound):
        raise RuleError("bound entities must be distinct")
    known = set(scene.entity_ids)
    for eid in bound:
        if eid not in known:
            raise RuleError(f"binding uses unknown entity {eid!r}")
    pool = [eid for eid in scene.entity_ids if eid not in set(bound)]
    atoms = scene.atoms
    for assign in itertools.permutations(pool, len(expr.existential_vars)):
        env = dict(binding)
        env.update(zip(expr.existential_vars, assign))
        if all(GroundAtom(attr, tuple(env[v] for v in vs)) in atoms for attr, vs in expr.atoms):
            return True
    return False


def apply_rule(scene: Scene, rule: CoreRule) -> set[GroundAtom]:
    """All target atoms mandated by the rule: one per free-variable binding under
    which some disjunct holds. This is the labeling oracle for generated data."""
    out: set[GroundAtom] = set()
    for combo in itertools.permutations(scene.entity_ids, len(rule.rhs_args)):
        binding = dict(zip(rule.rhs_args, combo))
        if any(eval_conjunctive(scene, expr, binding) for expr in rule.lhs):
            out.add(GroundAtom(rule.rhs, combo))
    return out


def compose_rules(outer: CoreRule, inner: CoreRule) -> CoreRule:
    """Substitute the inner rule's left-hand side for the inner target atom
    inside each outer disjunct that mentions it, distributing disjunctions.

    Inner existentials are renamed fresh, so in the composed rule they must
    denote entities distinct from *all* other variables of the host disjunct;
    the original two-step application only required distinctness within each
    rule. The two semantics agree whenever the rewritten disjuncts use no
    variables beyond those of the substituted atom.
    """
    new_disjuncts: list[ConjunctiveExpression] = []
    for expr in outer.lhs:
        hits = [i for i, (attr, _) in enumerate(expr.atoms) if attr == inner.rhs]
        if not hits:
            new_disjuncts.append(expr)
            continue
        if len(hits) > 1:
            raise RuleError(f"{inner.rhs.name} occurs {len(hits)} times in one disjunct; expected exactly one")
        index = hits[0]
        _, args = expr.atoms[index]
        if len(set(args)) != len(args):
            raise RuleError(f"cannot substitute into {inner.rhs.name}{args}: repeated variables")
        for inner_expr in inner.lhs:
            rename = dict(zip(inner.rhs_args, args))
            taken = set(expr.variables) | set(rename.values())
            fresh: dict[str, str] = {}
            for v in inner_expr.existential_vars:
                candidate, n = v, 0
                while candidate in taken:
                    n += 1
                    candidate = f"{v}{n}"
                fresh[v] = candidate
                taken.add(candidate)
            sub = {**rename, **fresh}
            injected = tuple((attr, tuple(sub[u] for u in vs)) for attr, vs in inner_expr.atoms)
            atoms = expr.atoms[:index] + injected + expr.atoms[index + 1:]
            new_disjuncts.append(
                ConjunctiveExpression(
                    atoms=atoms,
                    free_vars=expr.free_vars,
                    existential_vars=expr.existential_vars + tuple(fresh[v] for v in inner_expr.existential_vars),
                )
            )
    name = f"{outer.name}+{inner.name}" if outer.name or inner.name else ""
    return CoreRule(tuple(new_disjuncts), outer.rhs, outer.rhs_args, name=name)


# ---------------------------------------------------------------------------
# Built-in schema catalog: the six classic left-hand-side templates.
# None of them restricts the learner; they exist for generators and tests.

def schema_i(b: Attribute) -> ConjunctiveExpression:
    _require_arity(b, 1)
    return ConjunctiveExpression(((b, ("x",)),), free_vars=("x",))


def schema_ii(b: Attribute) -> ConjunctiveExpression:
    _require_arity(b, 2)
    return ConjunctiveExpression(((b, ("x", "y")),), free_vars=("x",), existential_vars=("y",))


def schema_iii(b: Attribute, c: Attribute) -> ConjunctiveExpression:
    _require_arity(b, 2), _require_arity(c, 1)
    return ConjunctiveExpression(((b, ("x", "y")), (c, ("y",))), free_vars=("x",), existential_vars=("y",))


def schema_iv(b: Attribute, c: Attribute) -> ConjunctiveExpression:
    _require_arity(b, 2), _require_arity(c, 2)
    return ConjunctiveExpression(((b, ("x", "y")), (c, ("x", "y"))), free_vars=("x",), existential_vars=("y",))


def schema_v(b: Attribute, c: Attribute) -> ConjunctiveExpression:
    _require_arity(b, 2), _require_arity(c, 2)
    return ConjunctiveExpression(
        ((b, ("x", "y")), (c, ("x", "z"))), free_vars=("x",), existential_vars=("y", "z")
    )


def schema_vi(b: Attribute, c: Attribute) -> ConjunctiveExpression:
    _require_arity(b, 2), _require_arity(c, 2)
    return ConjunctiveExpression(
        ((b, ("x", "y")), (c, ("x", "z"))), free_vars=("y", "z"), existential_vars=("x",)
    )


def _require_arity(attr: Attribute, arity: int) -> None:
    if attr.arity != arity:
        raise RuleError(f"schema expects arity {arity}, got {attr.name}/{attr.arity}")


SCHEMAS = {
    "i": schema_i,
    "ii": schema_ii,
    "iii": schema_iii,
    "iv": schema_iv,
    "v": schema_v,
    "vi": schema_vi,
}


# ---------------------------------------------------------------------------
# Stock story domain used across generators, demos, and tests.

INSULTED = Attribute("Insulted", 2)
LIKES = Attribute("Likes", 2)
REVENGES = Attribute("Revenges", 2)
DOES_BAD_TO = Attribute("DoesBadTo", 2)

STORY_ENTITY_POOL = ("Amy", "Bill", "Bob", "Carl", "Dora", "Eve", "Joan", "Joe", "Sue")


def example_vocabulary() -> AugmentedVocabulary:
    """The three-person vocabulary of the worked revenge example."""
    return define_vocabulary(("Bob", "Joe", "Sue"), (INSULTED, LIKES, REVENGES))


def story_vocabulary(include_does_bad_to: bool = True) -> AugmentedVocabulary:
    attrs = [INSULTED, LIKES, REVENGES] + ([DOES_BAD_TO] if include_does_bad_to else [])
    return define_vocabulary(STORY_ENTITY_POOL, attrs)


def example_scene() -> Scene:
    """Bob insulted Joe, Sue likes Joe, Sue revenges Bob; positions 0, 1, 2."""
    return make_scene(
        {"Bob": 0, "Joe": 1, "Sue": 2},
        [(INSULTED, ("Bob", "Joe")), (LIKES, ("Sue", "Joe")), (REVENGES, ("Sue", "Bob"))],
    )


def revenge_rule() -> CoreRule:
    """Someone z revenges x when x insulted a person y whom z likes."""
    body = ConjunctiveExpression(
        ((INSULTED, ("x", "y")), (LIKES, ("z", "y"))),
        free_vars=("x", "z"),
        existential_vars=("y",),
    )
    return CoreRule((body,), REVENGES, ("z", "x"), name="revenge")


def does_bad_to_rule() -> CoreRule:
    body = ConjunctiveExpression(((INSULTED, ("x", "y")),), free_vars=("x", "y"))
    return CoreRule((body,), DOES_BAD_TO, ("x", "y"), name="does_bad_to")


def revenge_from_does_bad_to_rule() -> CoreRule:
    body = ConjunctiveExpression(
        ((DOES_BAD_TO, ("x", "y")), (LIKES, ("z", "y"))),
        free_vars=("x", "z"),
        existential_vars=("y",),
    )
    return CoreRule((body,), REVENGES, ("z", "x"), name="revenge_from_does_bad_to")


RULE_BUILDERS = {
    "revenge": revenge_rule,
    "does_bad_to": does_bad_to_rule,
    "revenge_from_does_bad_to": revenge_from_does_bad_to_rule,
}


def get_rule(name: str) -> CoreRule:
    try:
        return RULE_BUILDERS[name]()
    except KeyError:
        raise RuleError(f"unknown rule {name!r} (known: {sorted(RULE_BUILDERS)})") from None


# ---------------------------------------------------------------------------
# Rule file format: `rule <name>` header, one `lhs` line per disjunct,
# one `rhs` line. Example:
#   rule revenge
#   lhs exists y : Insulted(x,y) & Likes(z,y)
#   rhs Revenges(z,x)

_ATOM_RE = re.compile(r"([A-Za-z][A-Za-z0-9_]*)\(([^()]*)\)")


def _parse_atoms(text: str, attrs: Mapping[str, Attribute]) -> tuple[tuple[Attribute, tuple[str, ...]], ...]:
    out = []
    rest = text
    for m in _ATOM_RE.finditer(text):
        name, argtext = m.group(1), m.group(2)
        if name not in attrs:
            raise RuleError(f"unknown attribute {name!r} in rule body")
        args = tuple(a.strip() for a in argtext.split(",") if a.strip())
        out.append((attrs[name], args))
        rest = rest.replace(m.group(0), "", 1)
    if rest.replace("&", "").strip():
        raise RuleError(f"unparsed rule text: {rest.strip()!r}")
    if not out:
        raise RuleError("empty conjunction")
    return tuple(out)


def parse_rules(text: str, vocab: AugmentedVocabulary) -> dict[str, CoreRule]:
    attrs = {a.name: a for a in vocab.attributes}
    rules: dict[str, CoreRule] = {}
    name = None
    disjuncts: list[tuple[tuple[str, ...], tuple[tuple[Attribute, tuple[str, ...]], ...]]] = []
    rhs: tuple[Attribute, tuple[str, ...]] | None = None

    def flush():
        nonlocal name, disjuncts, rhs
        if name is None:
            return
        if rhs is None or not disjuncts:
            raise RuleError(f"rule {name!r} needs at least one lhs line and an rhs line")
        rhs_attr, rhs_args = rhs
        lhs = tuple(
            ConjunctiveExpression(atoms, free_vars=rhs_args, existential_vars=ex)
            for ex, atoms in disjuncts
        )
        rules[name] = CoreRule(lhs, rhs_attr, rhs_args, name=name)
        name, disjuncts, rhs = None, [], None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, body = line.partition(" ")
        body = body.strip()
        if head == "rule":
            flush()
            if not _NAME_RE.match(body):
                raise RuleError(f"line {lineno}: bad rule name {body!r}")
            name = body
        elif head == "lhs":
            if name is None:
                raise RuleError(f"line {lineno}: lhs before any 'rule' header")
            existentials: tuple[str, ...] = ()
            if body.startswith("exists"):
                decl, _, body = body.partition(":")
                existentials = tuple(decl.split()[1:])
                body = body.strip()
            disjuncts.append((existentials, _parse_atoms(body, attrs)))
        elif head == "rhs":
            if name is None:
                raise RuleError(f"line {lineno}: rhs before any 'rule' header")
            atoms = _parse_atoms(body, attrs)
            if len(atoms) != 1:
                raise RuleError(f"line {lineno}: rhs must be a single atom")
            rhs = atoms[0]
        else:
            raise RuleError(f"line {lineno}: expected 'rule', 'lhs', or 'rhs', got {head!r}")
    flush()
    return rules


def format_rules(rules: Iterable[CoreRule]) -> str:
    lines = []
    for rule in rules:
        lines.append(f"rule {rule.name or 'unnamed'}")
        for expr in rule.lhs:
            prefix = f"exists {' '.join(expr.existential_vars)} : " if expr.existential_vars else ""
            body = " & ".join(f"{a.name}({','.join(vs)})" for a, vs in expr.atoms)
            lines.append(f"lhs {prefix}{body}")
        lines.append(f"rhs {rule.rhs.name}({','.join(rule.rhs_args)})")
    return "\n".join(lines) + "\n"


def load_rules(path: str | Path, vocab: AugmentedVocabulary) -> dict[str, CoreRule]:
    return parse_rules(Path(path).read_text(), vocab)


def save_rules(rules: Iterable[CoreRule], path: str | Path) -> None:
    Path(path).write_text(format_rules(rules))
