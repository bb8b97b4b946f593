"""Compile approximate-equivalence rules into k-DNF formulae over block features.

Each disjunct of a rule turns into one monotone conjunction per assignment of
distinct blocks (or distinct relative offsets) to its variables: the literals
are the unary decompositions of the disjunct's atoms. On scenes where no
attribute occurs in more than one atom, the compiled formula predicts the
target role token exactly where brute-force rule application puts it.

Convention: the role token A^p attaches to the block of the p-th argument, so
the target token for role p is predicted at the block bound to the rhs
variable in position p.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .codec import BlockPresenceFeatures
from .relational import AugmentedVocabulary, CoreRule, VocabularyError

ABSOLUTE = "absolute"
RELATIVE = "relative"


class CompileError(ValueError):
    pass


class FeatureLiteral(NamedTuple):
    """`block` is an absolute index in an absolute-frame formula, a signed
    offset from the target block in a relative-frame one."""

    block: int
    token: str


Term = tuple[FeatureLiteral, ...]


@dataclass(frozen=True)
class KDnfFormula:
    target_token: str
    k: int
    frame: str
    terms: tuple[Term, ...]

    def __post_init__(self):
        if self.frame not in (ABSOLUTE, RELATIVE):
            raise CompileError(f"frame must be '{ABSOLUTE}' or '{RELATIVE}'")
        if self.k < 1:
            raise CompileError("k must be >= 1")
        for term in self.terms:
            if not 1 <= len(term) <= self.k:
                raise CompileError(f"term size {len(term)} violates bound k={self.k}")

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def max_offset(self) -> int:
        if self.frame != RELATIVE:
            raise CompileError("max_offset applies to relative formulae only")
        return max((abs(lit.block) for term in self.terms for lit in term), default=0)


def _canonical(terms: Iterable[Iterable[FeatureLiteral]]) -> tuple[Term, ...]:
    unique = {tuple(sorted(set(term))) for term in terms}
    return tuple(sorted(unique))


def _decompose(expr, assignment) -> set[FeatureLiteral]:
    literals = set()
    for attr, vs in expr.atoms:
        for position, v in enumerate(vs, start=1):
            literals.add(FeatureLiteral(assignment[v], attr.role_token(position)))
    return literals


def compile_rule_absolute(
    rule: CoreRule, n_blocks: int, target_position: int, target_role: int
) -> KDnfFormula:
    """One term per assignment of distinct blocks to the variables of each
    disjunct, with the target variable pinned to `target_position`."""
    if not 1 <= target_role <= rule.rhs.arity:
        raise CompileError(f"target role {target_role} outside 1..{rule.rhs.arity}")
    if not 0 <= target_position < n_blocks:
        raise CompileError(f"target position {target_position} outside [0, {n_blocks})")
    target_var = rule.rhs_args[target_role - 1]
    terms: list[set[FeatureLiteral]] = []
    for expr in rule.lhs:
        variables = expr.variables
        if n_blocks < len(variables):
            raise CompileError(
                f"window of {n_blocks} blocks cannot host {len(variables)} distinct variables"
            )
        others = [v for v in variables if v != target_var]
        pool = [b for b in range(n_blocks) if b != target_position]
        for assign in itertools.permutations(pool, len(others)):
            mapping = {target_var: target_position, **dict(zip(others, assign))}
            terms.append(_decompose(expr, mapping))
    return KDnfFormula(
        target_token=rule.rhs.role_token(target_role),
        k=rule.max_arity_sum,
        frame=ABSOLUTE,
        terms=_canonical(terms),
    )


def compile_rule_relative(rule: CoreRule, max_offset: int, target_role: int = 1) -> KDnfFormula:
    """Position-independent form: the target variable sits at offset 0 and the
    other variables range over the distinct nonzero offsets in [-M, M]."""
    if max_offset < 1:
        raise CompileError("max offset must be >= 1")
    if not 1 <= target_role <= rule.rhs.arity:
        raise CompileError(f"target role {target_role} outside 1..{rule.rhs.arity}")
    target_var = rule.rhs_args[target_role - 1]
    pool = [d for d in range(-max_offset, max_offset + 1) if d != 0]
    terms: list[set[FeatureLiteral]] = []
    for expr in rule.lhs:
        others = [v for v in expr.variables if v != target_var]
        for assign in itertools.permutations(pool, len(others)):
            mapping = {target_var: 0, **dict(zip(others, assign))}
            terms.append(_decompose(expr, mapping))
    return KDnfFormula(
        target_token=rule.rhs.role_token(target_role),
        k=rule.max_arity_sum,
        frame=RELATIVE,
        terms=_canonical(terms),
    )


class CompiledEvaluator:
    """Vectorized evaluator for one formula against presence grids.

    Terms become index arrays once; each evaluation is a single gather. Terms
    whose blocks fall outside the grid are false.
    """

    def __init__(self, formula: KDnfFormula, vocab: AugmentedVocabulary):
        self.formula = formula
        self.vocab = vocab
        for term in formula.terms:
            for lit in term:
                if not vocab.has_token(lit.token):
                    raise VocabularyError(f"formula token {lit.token!r} not in vocabulary")
        width = max((len(t) for t in formula.terms), default=1)
        blocks = np.zeros((len(formula.terms), width), dtype=np.int64)
        tokens = np.zeros((len(formula.terms), width), dtype=np.int64)
        for i, term in enumerate(formula.terms):
            for j in range(width):
                lit = term[min(j, len(term) - 1)]  # pad by repeating a literal
                blocks[i, j] = lit.block
                tokens[i, j] = vocab.index_token(lit.token)
        self._blocks = blocks
        self._tokens = tokens

    def evaluate(self, features: BlockPresenceFeatures, target_block: int | None = None) -> bool:
        if features.vocab.all_tokens != self.vocab.all_tokens:
            raise VocabularyError("features and formula use different vocabularies")
        if not self.formula.terms:
            return False
        if self.formula.frame == RELATIVE:
            if target_block is None:
                raise CompileError("relative formulae require a target block")
            blocks = self._blocks + target_block
        else:
            blocks = self._blocks
        n = features.n_blocks
        valid = ((blocks >= 0) & (blocks < n)).all(axis=1)
        if not valid.any():
            return False
        flat = features.grid.reshape(-1)
        stride = features.grid.shape[1]
        idx = np.clip(blocks, 0, n - 1) * stride + self._tokens
        satisfied = flat[idx].all(axis=1) & valid
        return bool(satisfied.any())


def eval_dnf(
    formula: KDnfFormula, features: BlockPresenceFeatures, target_block: int | None = None
) -> bool:
    """True iff some term has every literal present in the feature grid."""
    return CompiledEvaluator(formula, features.vocab).evaluate(features, target_block)


# ---------------------------------------------------------------------------
# Formula file format: header `target <token> k <k> frame <abs|rel>`, then one
# term per line as space-separated `(<offset-or-pos>,<token>)` pairs.

_FRAME_CODE = {ABSOLUTE: "abs", RELATIVE: "rel"}
_FRAME_NAME = {"abs": ABSOLUTE, "rel": RELATIVE}
_LIT_RE = re.compile(r"\((-?\d+),([^)]+)\)")


def format_formula(formula: KDnfFormula) -> str:
    lines = [f"target {formula.target_token} k {formula.k} frame {_FRAME_CODE[formula.frame]}"]
    for term in formula.terms:
        lines.append(" ".join(f"({lit.block},{lit.token})" for lit in term))
    return "\n".join(lines) + "\n"


def parse_formula(text: str) -> KDnfFormula:
    lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not lines:
        raise CompileError("empty formula file")
    header = lines[0].split()
    if len(header) != 6 or header[0] != "target" or header[2] != "k" or header[4] != "frame":
        raise CompileError(f"bad formula header {lines[0]!r}")
    target, k, frame = header[1], int(header[3]), _FRAME_NAME.get(header[5])
    if frame is None:
        raise CompileError(f"bad frame {header[5]!r}")
    terms = []
    for line in lines[1:]:
        if line.split()[0] == "stat":  # model files append a stats trailer
            break
        lits = [FeatureLiteral(int(m.group(1)), m.group(2)) for m in _LIT_RE.finditer(line)]
        if not lits:
            raise CompileError(f"unparsable term line {line!r}")
        terms.append(lits)
    return KDnfFormula(target, k, frame, _canonical(terms))


def save_formula(formula: KDnfFormula, path: str | Path) -> None:
    Path(path).write_text(format_formula(formula))


def load_formula(path: str | Path) -> KDnfFormula:
    return parse_formula(Path(path).read_text())
