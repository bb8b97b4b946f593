"""Seeded synthetic scene distributions with planted ground-truth rules.

Scenes are sampled cluster by cluster: the block range splits into segments
of at most `max_offset + 1` consecutive blocks and every atom draws its
arguments from a single segment. Planted rules must have connected disjuncts
(atoms linked through shared variables), so any satisfying instance lives
inside one segment and all linked entities sit within the stated distance of
each other.

Attributes derived by planted rules are never base-sampled: their atoms are
exactly what rule application mandates, applied cumulatively in rule order.
Label noise flips the per-(block, role-token) labels at dataset-building time;
atom-level flipping cannot make labels uniform at a noise rate of one half,
which the noise contract requires.

RNG streams derive from (seed, draw index), so generation is reproducible and
order-independent under parallel draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .codec import BlockPresenceFeatures, encode_scene, strip_attribute_tokens, to_block_presence
from .learner import LabeledExample
from .relational import (
    Attribute,
    AugmentedVocabulary,
    ConjunctiveExpression,
    CoreRule,
    Entity,
    GroundAtom,
    INSULTED,
    LIKES,
    REVENGES,
    Scene,
    _parse_atoms,
    apply_rule,
    define_vocabulary,
    get_rule,
    load_rules,
    make_scene,
)


class GeneratorError(ValueError):
    pass


_MAX_RETRIES = 200


def _connected(expr: ConjunctiveExpression) -> bool:
    if len(expr.atoms) <= 1:
        return True
    groups = [set(vs) for _, vs in expr.atoms]
    merged = groups[0]
    pending = groups[1:]
    while pending:
        hit = next((g for g in pending if g & merged), None)
        if hit is None:
            return False
        merged |= hit
        pending.remove(hit)
    return True


@dataclass(frozen=True)
class DistributionSpec:
    """Parameters of one scene distribution.

    `instance_patterns` lists conjunctive expressions planted verbatim as base
    atoms (with the given per-scene rate); they are how positives of a planted
    rule's left-hand side get into circulation.
    """

    vocab: AugmentedVocabulary
    n_blocks: int
    entity_range: tuple[int, int]
    block_size: int = 6
    max_offset: int = 3
    densities: Mapping[str, float] = field(default_factory=dict)
    planted_rules: tuple[CoreRule, ...] = ()
    instance_patterns: tuple[tuple[ConjunctiveExpression, float], ...] = ()
    repeat_rate: float = 0.0
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "densities", dict(self.densities))
        lo, hi = self.entity_range
        if not 1 <= lo <= hi:
            raise GeneratorError(f"bad entity range {self.entity_range}")
        if hi > self.n_blocks:
            raise GeneratorError(f"entity count up to {hi} exceeds {self.n_blocks} blocks")
        # names may repeat across a scene, but stay distinct within a segment
        if len(self.vocab.entity_names) < min(hi, self.max_offset + 1):
            raise GeneratorError(
                f"{len(self.vocab.entity_names)} names cannot fill segments of {self.max_offset + 1} blocks"
            )
        if self.max_offset < 1:
            raise GeneratorError("max offset must be >= 1")
        if not 0.0 <= self.repeat_rate <= 1.0 or not 0.0 <= self.label_noise <= 1.0:
            raise GeneratorError("rho and eta must lie in [0, 1]")
        derived = {rule.rhs.name for rule in self.planted_rules}
        for name in self.densities:
            self.vocab.attribute(name)
            if name in derived:
                raise GeneratorError(f"attribute {name} is derived by a planted rule; it cannot be base-sampled")
        for rule in self.planted_rules:
            for expr in rule.lhs:
                if not _connected(expr):
                    raise GeneratorError(
                        f"rule {rule.name or rule.rhs.name}: disjunct atoms must share variables "
                        "so instances stay within the linkage distance"
                    )
        for expr, rate in self.instance_patterns:
            if not 0.0 <= rate <= 1.0:
                raise GeneratorError("instance rates must lie in [0, 1]")
            for attr, _ in expr.atoms:
                if attr.name in derived:
                    raise GeneratorError(f"pattern uses derived attribute {attr.name}")
        if sum(rate for _, rate in self.instance_patterns) > 1.0 + 1e-9:
            raise GeneratorError("pattern rates form one categorical draw; they must sum to at most 1")

    @property
    def derived_attributes(self) -> tuple[Attribute, ...]:
        seen = []
        for rule in self.planted_rules:
            if rule.rhs not in seen:
                seen.append(rule.rhs)
        return tuple(seen)

    def segments(self) -> tuple[tuple[int, int], ...]:
        step = self.max_offset + 1
        return tuple((s, min(s + step, self.n_blocks)) for s in range(0, self.n_blocks, step))


def _rng_for(spec: DistributionSpec, draw_index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([spec.seed, draw_index, stream])


def _sample_once(spec: DistributionSpec, rng: np.random.Generator) -> Scene | None:
    lo, hi = spec.entity_range
    count = int(rng.integers(lo, hi + 1))
    positions = sorted(int(p) for p in rng.choice(spec.n_blocks, size=count, replace=False))

    # names: distinct within a segment, reused across segments when the pool
    # is smaller than the scene; ids disambiguate duplicates by position
    step = spec.max_offset + 1
    pool = spec.vocab.entity_names
    names: dict[int, str] = {}
    if count <= len(pool):
        drawn = rng.choice(pool, size=count, replace=False)
        names = {pos: str(n) for pos, n in zip(positions, drawn)}
    else:
        for seg_index in range(len(spec.segments())):
            members = [p for p in positions if p // step == seg_index]
            if not members:
                continue
            drawn = rng.choice(pool, size=len(members), replace=False)
            names.update({pos: str(n) for pos, n in zip(members, drawn)})
    name_counts: dict[str, int] = {}
    for pos in positions:
        name_counts[names[pos]] = name_counts.get(names[pos], 0) + 1
    eid_of = {
        pos: names[pos] if name_counts[names[pos]] == 1 else f"{names[pos]}@{pos}"
        for pos in positions
    }
    entities = tuple(Entity(eid_of[p], names[p]) for p in positions)
    entity_positions = {eid_of[p]: p for p in positions}

    by_segment: list[list[str]] = [[] for _ in spec.segments()]
    for p in positions:
        by_segment[p // step].append(eid_of[p])

    atoms: set[GroundAtom] = set()
    used: dict[str, int] = {}

    def add(atom: GroundAtom) -> None:
        if atom not in atoms:
            atoms.add(atom)
            used[atom.attribute.name] = used.get(atom.attribute.name, 0) + 1

    def draw_atom(attr: Attribute) -> GroundAtom | None:
        eligible = [i for i, seg in enumerate(by_segment) if len(seg) >= attr.arity]
        if not eligible:
            return None
        seg = by_segment[int(rng.choice(eligible))]
        args = tuple(str(a) for a in rng.choice(seg, size=attr.arity, replace=False))
        return GroundAtom(attr, args)

    # one categorical draw: at most one pattern instance per scene, so pattern
    # rates do not fight each other through no-repeat rejections
    if spec.instance_patterns:
        roll = rng.random()
        acc = 0.0
        for expr, rate in spec.instance_patterns:
            acc += rate
            if roll >= acc:
                continue
            needed = len(expr.variables)
            eligible = [i for i, seg in enumerate(by_segment) if len(seg) >= needed]
            if eligible:
                seg = by_segment[int(rng.choice(eligible))]
                chosen = [str(a) for a in rng.choice(seg, size=needed, replace=False)]
                env = dict(zip(expr.variables, chosen))
                for attr, vs in expr.atoms:
                    add(GroundAtom(attr, tuple(env[v] for v in vs)))
            break

    # densities are per-scene probabilities of one atom, placed in a random
    # eligible segment; a second draw happens at the repeat rate
    for attr_name in sorted(spec.densities):
        attr = spec.vocab.attribute(attr_name)
        density = spec.densities[attr_name]
        draws = int(rng.random() < density)
        if spec.repeat_rate > 0.0 and rng.random() < density * spec.repeat_rate:
            draws += 1
        for _ in range(draws):
            atom = draw_atom(attr)
            if atom is None:
                continue
            if used.get(attr_name, 0) == 0:
                add(atom)
            elif spec.repeat_rate > 0.0 and rng.random() < spec.repeat_rate:
                add(atom)

    scene = Scene(entities, frozenset(atoms), entity_positions, spec.n_blocks)
    for rule in spec.planted_rules:
        mandated = apply_rule(scene, rule)
        for atom in mandated:
            segs = {scene.positions[a] // step for a in atom.args}
            if len(segs) > 1:
                return None  # instance leaked across segments; resample
        scene = scene.with_atoms(mandated)
        for atom in mandated:
            used[atom.attribute.name] = used.get(atom.attribute.name, 0) + 1

    if spec.repeat_rate == 0.0:
        per_attr: dict[str, int] = {}
        for atom in scene.atoms:
            per_attr[atom.attribute.name] = per_attr.get(atom.attribute.name, 0) + 1
        if any(c > 1 for c in per_attr.values()):
            return None

    roles: dict[str, int] = {}
    for atom in scene.atoms:
        for arg in atom.args:
            roles[arg] = roles.get(arg, 0) + 1
    if any(c > spec.block_size - 1 for c in roles.values()):
        return None
    return scene


def sample_scene(spec: DistributionSpec, draw_index: int) -> Scene:
    """Deterministic in (spec.seed, draw_index); resamples until the no-repeat,
    locality, and block-capacity constraints hold."""
    rng = _rng_for(spec, draw_index)
    for _ in range(_MAX_RETRIES):
        scene = _sample_once(spec, rng)
        if scene is not None:
            return scene
    raise GeneratorError(
        f"draw {draw_index}: no admissible scene in {_MAX_RETRIES} attempts; spec too tight"
    )


@dataclass(frozen=True)
class LabeledDataset:
    """Featurized per-(scene, block) examples for one target token, plus
    generator provenance."""

    examples: tuple[LabeledExample, ...]
    target_token: str
    positive_rate: float
    spec_seed: int
    first_draw: int
    warnings: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.examples)

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, index):
        return self.examples[index]


def generate_dataset(
    spec: DistributionSpec,
    target: tuple[Attribute, int],
    n: int,
    first_draw: int = 0,
    strip: Sequence[Attribute] | None = None,
) -> LabeledDataset:
    """Encode `n` sampled scenes, strip the target attribute's tokens from the
    features, and label every block by target-token presence (noise-flipped
    with probability eta)."""
    attr, role = target
    datasets = generate_multi_dataset(spec, attr, n, first_draw=first_draw, strip=strip, roles=(role,))
    return datasets[attr.role_token(role)]


def generate_multi_dataset(
    spec: DistributionSpec,
    attribute: Attribute,
    n: int,
    first_draw: int = 0,
    strip: Sequence[Attribute] | None = None,
    roles: Sequence[int] | None = None,
) -> dict[str, LabeledDataset]:
    """One dataset per role token of `attribute`, sharing a single encoding
    pass per scene."""
    if n < 1:
        raise GeneratorError("need at least one scene")
    spec.vocab.attribute(attribute.name)
    strip_attrs = tuple(strip) if strip is not None else (attribute,)
    if attribute not in strip_attrs:
        raise GeneratorError("the target attribute itself must be stripped from the features")
    roles = tuple(roles) if roles is not None else tuple(range(1, attribute.arity + 1))
    tokens = {r: attribute.role_token(r) for r in roles}

    per_role: dict[int, list[LabeledExample]] = {r: [] for r in roles}
    positives = {r: 0 for r in roles}
    for i in range(first_draw, first_draw + n):
        scene = sample_scene(spec, i)
        full = encode_scene(scene, spec.block_size, spec.vocab)
        visible = to_block_presence(strip_attribute_tokens(full, strip_attrs))
        noise = _rng_for(spec, i, stream=1)
        for block in range(scene.n_blocks):
            for r in roles:
                label = full.blocks[block].contains(tokens[r])
                if spec.label_noise > 0.0 and noise.random() < spec.label_noise:
                    label = not label
                if label:
                    positives[r] += 1
                per_role[r].append(
                    LabeledExample(
                        visible, block, label,
                        meta={"seed": spec.seed, "draw": i, "target": tokens[r]},
                    )
                )
    out: dict[str, LabeledDataset] = {}
    for r in roles:
        examples = per_role[r]
        rate = positives[r] / len(examples)
        warnings = ()
        if positives[r] == 0 or positives[r] == len(examples):
            warnings = (f"degenerate dataset: single-class labels for {tokens[r]}",)
        out[tokens[r]] = LabeledDataset(
            tuple(examples), tokens[r], rate, spec.seed, first_draw, warnings
        )
    return out


_DENSE_POOL = ("Amy", "Bob", "Carl", "Dora")


def example_distribution(
    seed: int,
    n_blocks: int = 8,
    repeat_rate: float = 0.0,
    label_noise: float = 0.0,
    extra_attributes: tuple[Attribute, ...] = (),
    planted_rules: tuple[CoreRule, ...] | None = None,
) -> DistributionSpec:
    """The stock revenge-rule distribution used by the demos and the
    verification suite: every block holds an entity named from a small pool,
    so every (offset, token) literal is frequent enough for the elimination
    learner to refute coincidence terms at desk-scale sample sizes.
    """
    from .relational import revenge_rule

    rule = revenge_rule()
    pattern = rule.lhs[0]
    object.__setattr__(pattern, "_pattern_tag", "revenge:0")
    # unlinked near-miss: insult and liking in one vicinity with different
    # objects, so partial-pattern conjunctions meet refuting negatives
    near_miss = ConjunctiveExpression(
        ((INSULTED, ("x", "y")), (LIKES, ("z", "w"))),
        free_vars=("x", "y", "z", "w"),
    )
    return DistributionSpec(
        vocab=define_vocabulary(_DENSE_POOL, (INSULTED, LIKES, REVENGES) + extra_attributes),
        n_blocks=n_blocks,
        entity_range=(n_blocks, n_blocks),
        block_size=6,
        max_offset=3,
        densities={"Insulted": 0.25, "Likes": 0.25},
        planted_rules=planted_rules if planted_rules is not None else (rule,),
        instance_patterns=((pattern, 0.5), (near_miss, 0.42)),
        repeat_rate=repeat_rate,
        label_noise=label_noise,
        seed=seed,
    )


def craft_confusion_case() -> Scene:
    """The repeated-relation trap: one real revenge triangle plus Joan, who
    likes some further person Bill, within linkage distance of everyone."""
    return make_scene(
        {"Bob": 0, "Joe": 1, "Sue": 2, "Joan": 3, "Bill": 4},
        [
            (INSULTED, ("Bob", "Joe")),
            (LIKES, ("Sue", "Joe")),
            (LIKES, ("Joan", "Bill")),
            (REVENGES, ("Sue", "Bob")),
        ],
    )


# ---------------------------------------------------------------------------
# Random vocabularies and rules for oracle-equivalence sweeps.

_GENERIC_ENTITIES = ("Ann", "Bea", "Cal", "Dee", "Eli", "Fay", "Gus", "Hal", "Ida", "Jon", "Kim", "Lou")
_GENERIC_ATTRS = ("Alpha", "Beta", "Gamma", "Delta", "Sigma", "Omega")


def random_vocabulary(rng: np.random.Generator, n_attributes: int = 4) -> AugmentedVocabulary:
    arities = [int(rng.choice([1, 2, 2, 2, 3])) for _ in range(n_attributes)]
    attrs = [Attribute(name, arity) for name, arity in zip(_GENERIC_ATTRS, arities)]
    return define_vocabulary(_GENERIC_ENTITIES, attrs)


def random_rule(
    rng: np.random.Generator,
    vocab: AugmentedVocabulary,
    max_arity_sum: int = 4,
    max_disjuncts: int = 2,
) -> CoreRule:
    """A random Core rule: every disjunct uses each attribute at most once,
    covers every free variable, and stays within the arity-sum budget."""
    rhs = vocab.attributes[int(rng.integers(len(vocab.attributes)))]
    n_free = min(rhs.arity, 2)
    free = ("x", "z")[:n_free]
    rhs_args = tuple(rng.permutation(free)) if rhs.arity == n_free else free[:rhs.arity]
    n_disjuncts = int(rng.integers(1, max_disjuncts + 1))
    lhs = []
    for _ in range(n_disjuncts):
        for _attempt in range(50):
            expr = _random_disjunct(rng, vocab, rhs, free, max_arity_sum)
            if expr is not None:
                lhs.append(expr)
                break
        else:
            raise GeneratorError("could not sample a disjunct within the arity budget")
    return CoreRule(tuple(lhs), rhs, tuple(rhs_args), name="random")


def _random_disjunct(rng, vocab, rhs, free, max_arity_sum) -> ConjunctiveExpression | None:
    choices = [a for a in vocab.attributes if a != rhs]
    rng.shuffle(choices)
    budget = int(rng.integers(len(free), max_arity_sum + 1))
    exist: list[str] = []
    atoms: list[tuple[Attribute, tuple[str, ...]]] = []
    unused = list(free)
    pool_names = ("y", "w", "v", "u")
    spent = 0
    for attr in choices:
        if spent + attr.arity > budget:
            continue
        args: list[str] = []
        for _ in range(attr.arity):
            if unused and (len(args) == 0 or rng.random() < 0.7):
                args.append(unused.pop(0))
            else:
                candidates = [v for v in list(free) + exist if v not in args]
                if candidates and rng.random() < 0.6:
                    args.append(str(rng.choice(candidates)))
                else:
                    name = next((n for n in pool_names if n not in exist), None)
                    if name is None:
                        return None
                    exist.append(name)
                    args.append(name)
        atoms.append((attr, tuple(args)))
        spent += attr.arity
        if spent >= budget:
            break
    if not atoms or unused:
        return None
    used = {v for _, vs in atoms for v in vs}
    exist = [v for v in exist if v in used]
    return ConjunctiveExpression(tuple(atoms), tuple(free), tuple(exist))


def random_scene_spec(
    vocab: AugmentedVocabulary,
    n_blocks: int,
    seed: int,
    density: float = 0.55,
    entity_range: tuple[int, int] | None = None,
) -> DistributionSpec:
    """A no-repeat distribution with no planted rules: atoms of every attribute
    appear at most once per scene, anywhere in the window."""
    lo, hi = entity_range if entity_range else (min(3, n_blocks), min(7, n_blocks, len(vocab.entity_names)))
    return DistributionSpec(
        vocab=vocab,
        n_blocks=n_blocks,
        entity_range=(lo, hi),
        block_size=max(6, len(vocab.attributes) + 2),
        max_offset=max(1, n_blocks - 1),  # a single segment: no locality constraint
        densities={a.name: density for a in vocab.attributes},
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Spec files: key=value lines.
#   N=8 h=6 M=3 rho=0.0 eta=0.0 seed=42 entity_count=4,8
#   entities=Bob,Joe attrs=Insulted:2 rules=revenge
#   instances=revenge:0:0.5 density.Likes=0.3

def format_spec(spec: DistributionSpec) -> str:
    lines = [
        f"N={spec.n_blocks}",
        f"h={spec.block_size}",
        f"M={spec.max_offset}",
        f"rho={spec.repeat_rate}",
        f"eta={spec.label_noise}",
        f"seed={spec.seed}",
        f"entity_count={spec.entity_range[0]},{spec.entity_range[1]}",
        "entities=" + ",".join(spec.vocab.entity_names),
        "attrs=" + ",".join(f"{a.name}:{a.arity}" for a in spec.vocab.attributes),
    ]
    if spec.planted_rules:
        lines.append("rules=" + ",".join(r.name for r in spec.planted_rules))
    for expr, rate in spec.instance_patterns:
        tag = getattr(expr, "_pattern_tag", None)
        if tag is not None:
            lines.append(f"instances={tag}:{rate}")
        else:
            body = "&".join(f"{a.name}({','.join(vs)})" for a, vs in expr.atoms)
            lines.append(f"pattern={body}:{rate}")
    for name in sorted(spec.densities):
        lines.append(f"density.{name}={spec.densities[name]}")
    return "\n".join(lines) + "\n"


def parse_spec(
    text: str,
    rules: Mapping[str, CoreRule] | None = None,
    rule_files: Sequence[str | Path] = (),
) -> DistributionSpec:
    values: dict[str, str] = {}
    densities: dict[str, float] = {}
    instance_specs: list[str] = []
    pattern_specs: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GeneratorError(f"line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("density."):
            densities[key[len("density."):]] = float(value)
        elif key == "instances":
            instance_specs.append(value)
        elif key == "pattern":
            pattern_specs.append(value)
        else:
            values[key] = value
    for required in ("N", "entities", "attrs", "entity_count"):
        if required not in values:
            raise GeneratorError(f"spec file missing {required}=")

    attrs = []
    for item in values["attrs"].split(","):
        name, _, arity = item.partition(":")
        attrs.append(Attribute(name.strip(), int(arity)))
    vocab = define_vocabulary([e.strip() for e in values["entities"].split(",")], attrs)

    extra: dict[str, CoreRule] = dict(rules or {})
    for path in rule_files:
        extra.update(load_rules(path, vocab))

    def lookup(name: str) -> CoreRule:
        if name in extra:
            return extra[name]
        return get_rule(name)

    planted = tuple(lookup(n.strip()) for n in values.get("rules", "").split(",") if n.strip())
    patterns = []
    for item in instance_specs:
        rule_name, disjunct, rate = item.rsplit(":", 2)
        expr = lookup(rule_name).lhs[int(disjunct)]
        object.__setattr__(expr, "_pattern_tag", f"{rule_name}:{disjunct}")
        patterns.append((expr, float(rate)))
    attr_map = {a.name: a for a in attrs}
    for item in pattern_specs:
        body, _, rate = item.rpartition(":")
        atoms = _parse_atoms(body, attr_map)
        seen: list[str] = []
        for _, vs in atoms:
            seen.extend(v for v in vs if v not in seen)
        patterns.append((ConjunctiveExpression(atoms, tuple(seen)), float(rate)))
    lo, hi = values["entity_count"].split(",")
    return DistributionSpec(
        vocab=vocab,
        n_blocks=int(values["N"]),
        entity_range=(int(lo), int(hi)),
        block_size=int(values.get("h", 6)),
        max_offset=int(values.get("M", 3)),
        densities=densities,
        planted_rules=planted,
        instance_patterns=tuple(patterns),
        repeat_rate=float(values.get("rho", 0.0)),
        label_noise=float(values.get("eta", 0.0)),
        seed=int(values.get("seed", 0)),
    )


def save_spec(spec: DistributionSpec, path: str | Path) -> None:
    Path(path).write_text(format_spec(spec))


def load_spec(
    path: str | Path,
    rules: Mapping[str, CoreRule] | None = None,
    rule_files: Sequence[str | Path] = (),
) -> DistributionSpec:
    return parse_spec(Path(path).read_text(), rules, rule_files)
