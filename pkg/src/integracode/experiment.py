"""Experiment orchestration: generate, train, evaluate, chain, and report.

Every run writes a metrics CSV, model files, and a manifest recording the
seeds and content digests needed to reproduce it byte for byte. Timings go to
the manifest, not the CSV, so reruns from the same manifest produce identical
metrics files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .chainer import Stage, StagePipeline, chain, save_pipeline
from .codec import encode_scene, strip_attribute_tokens, to_block_presence
from .compiler import CompiledEvaluator, compile_rule_absolute
from .learner import (
    EvalMetrics,
    LearnedModel,
    evaluate_model,
    format_training_log,
    learn_models,
    save_model,
)
from .relational import Attribute, CoreRule, apply_rule, get_rule, load_rules
from .scenegen import (
    DistributionSpec,
    GeneratorError,
    generate_multi_dataset,
    load_spec,
    random_rule,
    random_scene_spec,
    random_vocabulary,
    sample_scene,
)


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Analytic cost model.

@dataclass(frozen=True)
class CostModelParams:
    embedding_dim: int      # d
    window: int             # N original tokens
    block_size: int = 4     # h
    embed_expansion: int = 2  # g'
    relation_arity: int = 2   # r, for the prior Booleanization comparison

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def widening(self) -> int:
        return self.block_size * self.embed_expansion


@dataclass(frozen=True)
class CostReport:
    params: CostModelParams
    transformer_cost: int       # d N^2 + d^2 N
    recoded_cost: int           # g' h d N
    ratio: float
    widening: int               # W = h g'
    widening_margin: float      # min(d, N) / W; >> 1 is the saving regime
    prior_boolean_variables: int  # N^r
    recoded_tokens: int         # h N

    def rows(self) -> list[tuple[str, object]]:
        p = self.params
        return [
            ("d", p.embedding_dim),
            ("N", p.window),
            ("h", p.block_size),
            ("g_prime", p.embed_expansion),
            ("r", p.relation_arity),
            ("transformer_cost", self.transformer_cost),
            ("recoded_cost", self.recoded_cost),
            ("ratio", f"{self.ratio:.6g}"),
            ("widening", self.widening),
            ("widening_margin", f"{self.widening_margin:.6g}"),
            ("prior_boolean_variables", self.prior_boolean_variables),
            ("recoded_tokens", self.recoded_tokens),
        ]

    def format_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.rows()]
        regime = "holds" if self.widening_margin > 1.0 else "FAILS"
        lines.append(f"saving_condition W << min(d, N): {regime} (margin {self.widening_margin:.6g})")
        return "\n".join(lines) + "\n"


def cost_model(params: CostModelParams) -> CostReport:
    """Per-input cost of the quadratic baseline versus the recoded linear
    pipeline, plus the old per-relation Booleanization count for contrast."""
    d, n = params.embedding_dim, params.window
    transformer = d * n * n + d * d * n
    recoded = params.embed_expansion * params.block_size * d * n
    return CostReport(
        params=params,
        transformer_cost=transformer,
        recoded_cost=recoded,
        ratio=transformer / recoded,
        widening=params.widening,
        widening_margin=min(d, n) / params.widening,
        prior_boolean_variables=n ** params.relation_arity,
        recoded_tokens=params.block_size * n,
    )


# ---------------------------------------------------------------------------
# Oracle-equivalence sweep: compiled absolute formulae against brute force.

def prop1_sweep(
    n_rules: int = 200,
    scenes_per_rule: int = 50,
    seed: int = 7,
    max_blocks: int = 12,
    on_rule: Callable[[int, float], None] | None = None,
) -> list[dict[str, object]]:
    """For random rules over random vocabularies and random no-repeat scenes,
    compare the compiled absolute formula at every (block, role) with the
    brute-force oracle. Returns one row per rule with its agreement fraction.
    """
    rng = np.random.default_rng(seed)
    rows: list[dict[str, object]] = []
    for rule_index in range(n_rules):
        vocab = random_vocabulary(rng, n_attributes=int(rng.integers(3, 6)))
        rule = random_rule(rng, vocab)
        n_blocks = int(rng.integers(max(4, rule.max_arity_sum), max_blocks + 1))
        spec = random_scene_spec(vocab, n_blocks, seed=int(rng.integers(2**31)))

        evaluators = {}
        for role in range(1, rule.rhs.arity + 1):
            for position in range(n_blocks):
                formula = compile_rule_absolute(rule, n_blocks, position, role)
                evaluators[(role, position)] = CompiledEvaluator(formula, vocab)

        agreements = 0
        comparisons = 0
        for draw in range(scenes_per_rule):
            scene = sample_scene(spec, draw)
            features = to_block_presence(encode_scene(scene, spec.block_size, vocab))
            mandated = apply_rule(scene, rule)
            truth: set[tuple[int, int]] = set()
            for atom in mandated:
                for role, eid in enumerate(atom.args, start=1):
                    truth.add((role, scene.positions[eid]))
            for (role, position), evaluator in evaluators.items():
                predicted = evaluator.evaluate(features)
                agreements += int(predicted == ((role, position) in truth))
                comparisons += 1
        agreement = agreements / comparisons
        rows.append(
            {
                "rule": rule_index,
                "k": rule.max_arity_sum,
                "disjuncts": len(rule.lhs),
                "n_blocks": n_blocks,
                "scenes": scenes_per_rule,
                "comparisons": comparisons,
                "agreement": f"{agreement:.6f}",
            }
        )
        if on_rule is not None:
            on_rule(rule_index, agreement)
    return rows


# ---------------------------------------------------------------------------
# Single-target experiment: generate -> train -> evaluate.

@dataclass(frozen=True)
class ExperimentConfig:
    spec_path: str
    target: str                     # attribute name, or "Attr:role"
    out_dir: str
    rules_paths: tuple[str, ...] = ()
    learner: str = "elimination"
    k: int = 4
    max_offset: int = 3
    promotion: float = 2.0
    threshold: float | None = None
    noise_budget: int = 0
    n_scenes: int = 1000
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    threads: int = 1

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ExperimentError("config", f"split ratios {self.split} must sum to 1")
        if self.learner not in ("elimination", "winnow"):
            raise ExperimentError("config", f"unknown learner {self.learner!r}")
        if self.threads < 1:
            raise ExperimentError("config", "threads must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        if "split" in data:
            data["split"] = tuple(data["split"])
        if "rules_paths" in data:
            data["rules_paths"] = tuple(data["rules_paths"])
        return cls(**data)

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_target(spec: DistributionSpec, target: str) -> tuple[Attribute, tuple[int, ...]]:
    name, _, role = target.partition(":")
    attr = spec.vocab.attribute(name)
    roles = (int(role),) if role else tuple(range(1, attr.arity + 1))
    return attr, roles


def _generate_split(
    spec: DistributionSpec, attr: Attribute, roles, n: int, first_draw: int, threads: int,
    strip: Sequence[Attribute] | None = None,
):
    if threads <= 1 or n < 64:
        return generate_multi_dataset(spec, attr, n, first_draw=first_draw, strip=strip, roles=roles)
    # chunked parallel generation with a deterministic index-ordered merge
    chunk = max(16, n // (threads * 4))
    ranges = [(start, min(chunk, n - start)) for start in range(0, n, chunk)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(
            pool.map(
                lambda r: generate_multi_dataset(
                    spec, attr, r[1], first_draw=first_draw + r[0], strip=strip, roles=roles
                ),
                ranges,
            )
        )
    merged = {}
    for token in parts[0]:
        examples = tuple(ex for part in parts for ex in part[token].examples)
        positives = sum(ex.label for ex in examples)
        merged[token] = type(parts[0][token])(
            examples, token, positives / len(examples), spec.seed, first_draw,
        )
    return merged


def run_experiment(config: ExperimentConfig) -> dict[str, object]:
    """Generate, train, evaluate; write metrics.csv, model files, a training
    log, and a manifest. Any stage failure leaves partial outputs plus a
    failure marker naming the stage."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    stage = "load-spec"
    try:
        t0 = time.perf_counter()
        spec_path = Path(config.spec_path)
        spec = load_spec(spec_path, rule_files=config.rules_paths)
        attr, roles = _resolve_target(spec, config.target)
        timings[stage] = time.perf_counter() - t0

        stage = "generate"
        t0 = time.perf_counter()
        n_train = round(config.n_scenes * config.split[0])
        n_holdout = round(config.n_scenes * config.split[1])
        n_eval = config.n_scenes - n_train - n_holdout
        train = _generate_split(spec, attr, roles, max(1, n_train), 0, config.threads)
        holdout = _generate_split(spec, attr, roles, max(1, n_holdout), n_train, config.threads)
        evalset = _generate_split(spec, attr, roles, max(1, n_eval), n_train + n_holdout, config.threads)
        timings[stage] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        kwargs = {}
        if config.learner == "elimination":
            kwargs["noise_budget"] = config.noise_budget
        else:
            kwargs["promotion"] = config.promotion
            kwargs["threshold"] = config.threshold
        models = learn_models(
            {t: d.examples for t, d in train.items()}, config.k, config.max_offset,
            learner=config.learner, **kwargs,
        )
        timings[stage] = time.perf_counter() - t0

        stage = "evaluate"
        t0 = time.perf_counter()
        rows = []
        holdout_metrics: dict[str, EvalMetrics] = {}
        for token in sorted(models):
            hm = evaluate_model(models[token], holdout[token].examples)
            em = evaluate_model(models[token], evalset[token].examples)
            holdout_metrics[token] = hm
            stats = models[token].stats
            rows.append(
                {
                    "target": token,
                    "holdout_error": f"{hm.error:.6f}",
                    "eval_error": f"{em.error:.6f}",
                    "eval_fp_rate": f"{em.fp_rate:.6f}",
                    "eval_fn_rate": f"{em.fn_rate:.6f}",
                    "coverage": f"{em.coverage:.6f}",
                    "terms": stats.surviving_terms if stats else len(models[token].terms),
                    "train_positive_rate": f"{train[token].positive_rate:.6f}",
                }
            )
        timings[stage] = time.perf_counter() - t0

        stage = "write"
        model_files = {}
        for token in sorted(models):
            fname = f"{token.replace('^', '_')}.model"
            save_model(models[token], out / fname)
            model_files[token] = fname
        metrics_path = out / "metrics.csv"
        with metrics_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        (out / "training_log.csv").write_text(format_training_log(models))
        manifest = {
            "config": asdict(config),
            "config_digest": config.digest(),
            "spec_digest": _sha256_file(spec_path),
            "seed": spec.seed,
            "draws": {"train": [0, n_train], "holdout": [n_train, n_train + n_holdout],
                      "eval": [n_train + n_holdout, config.n_scenes]},
            "outputs": {
                "metrics.csv": _sha256_file(metrics_path),
                **{f: _sha256_file(out / f) for f in model_files.values()},
            },
            "timings_s": {k: round(v, 3) for k, v in timings.items()},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return {
            "models": models,
            "holdout": holdout_metrics,
            "rows": rows,
            "manifest": manifest,
            "out_dir": str(out),
        }
    except ExperimentError:
        raise
    except Exception as exc:
        (out / "FAILED").write_text(f"stage {stage}: {exc}\n")
        raise ExperimentError(stage, exc) from exc


# ---------------------------------------------------------------------------
# Two-stage chaining experiment with the soundness ledger.

@dataclass(frozen=True)
class ChainingResult:
    stage_accuracies: tuple[float, float]
    bound: float
    chained_accuracy: float
    predictions: int

    def rows(self) -> list[tuple[str, object]]:
        return [
            ("stage1_accuracy", f"{self.stage_accuracies[0]:.6f}"),
            ("stage2_accuracy", f"{self.stage_accuracies[1]:.6f}"),
            ("bound", f"{self.bound:.6f}"),
            ("chained_accuracy", f"{self.chained_accuracy:.6f}"),
            ("predictions", self.predictions),
        ]


def chaining_spec(seed: int, n_blocks: int = 8) -> DistributionSpec:
    """Distribution for the two-stage pipeline: plant the base pattern, derive
    the intermediate attribute with one rule and the final one with another."""
    from .relational import DOES_BAD_TO, does_bad_to_rule, revenge_from_does_bad_to_rule
    from .scenegen import example_distribution

    base = example_distribution(seed, n_blocks=n_blocks, extra_attributes=(DOES_BAD_TO,))
    return DistributionSpec(
        vocab=base.vocab,
        n_blocks=base.n_blocks,
        entity_range=base.entity_range,
        block_size=base.block_size,
        max_offset=base.max_offset,
        densities=base.densities,
        planted_rules=(does_bad_to_rule(), revenge_from_does_bad_to_rule()),
        instance_patterns=base.instance_patterns,
        seed=seed,
    )


def run_chaining_experiment(
    seed: int,
    n_train: int = 1200,
    n_holdout: int = 300,
    n_eval: int = 250,
    k: int = 4,
    max_offset: int = 3,
    out_dir: str | Path | None = None,
) -> ChainingResult:
    """Train the intermediate and final stages separately, record their
    holdout accuracies, then measure end-to-end accuracy of the final tokens
    on fresh scenes whose derived tokens are hidden from the input."""
    from .relational import DOES_BAD_TO, REVENGES

    spec = chaining_spec(seed)
    hide = (DOES_BAD_TO, REVENGES)

    stage_models: list[dict[str, LearnedModel]] = []
    accuracies: list[float] = []
    for attr in (DOES_BAD_TO, REVENGES):
        strip = hide if attr is DOES_BAD_TO else (REVENGES,)
        train = generate_multi_dataset(spec, attr, n_train, strip=strip)
        holdout = generate_multi_dataset(spec, attr, n_holdout, first_draw=n_train, strip=strip)
        models = learn_models({t: d.examples for t, d in train.items()}, k, max_offset)
        metrics = [evaluate_model(models[t], holdout[t].examples) for t in sorted(models)]
        total = sum(m.total for m in metrics)
        wrong = sum(m.false_positives + m.false_negatives for m in metrics)
        stage_models.append(models)
        accuracies.append(1.0 - wrong / total)

    pipeline = StagePipeline(
        (Stage(stage_models[0], accuracies[0]), Stage(stage_models[1], accuracies[1]))
    )
    bound = pipeline.soundness_bound()

    correct = total = 0
    first_eval = n_train + n_holdout
    final_tokens = [REVENGES.role_token(r) for r in (1, 2)]
    for draw in range(first_eval, first_eval + n_eval):
        scene = sample_scene(spec, draw)
        full = encode_scene(scene, spec.block_size, spec.vocab)
        visible = strip_attribute_tokens(full, hide)
        chained, _trace = chain(visible, pipeline)
        for block in range(scene.n_blocks):
            for token in final_tokens:
                predicted = chained.blocks[block].contains(token)
                truth = full.blocks[block].contains(token)
                correct += int(predicted == truth)
                total += 1
    result = ChainingResult((accuracies[0], accuracies[1]), bound, correct / total, total)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_pipeline(pipeline, out, name="chain")
        with (out / "chaining.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerows(result.rows())
    return result


def write_csv(rows: Sequence[Mapping[str, object]], path: str | Path) -> None:
    if not rows:
        raise ExperimentError("write", "no rows to write")
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def format_csv(rows: Sequence[Mapping[str, object]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
