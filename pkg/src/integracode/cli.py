"""Command-line interface.

Subcommands: gen, encode, parse, compile-rule, train, eval, infer, chain,
cost-model, prop1-suite. Long-form flags only. Exit codes: 0 success,
2 configuration error, 3 data error, 4 internal invariant violation.

The default output directory comes from INTEGRACODE_OUT (falling back to the
current directory).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .chainer import ChainError, StagePipeline, Stage, chain, classify_call, load_pipeline, save_trace
from .codec import (
    CodecError,
    encode_scene,
    format_sequence,
    load_scenes,
    load_sequence,
    save_scenes,
    save_sequence,
    strip_attribute_tokens,
    to_block_presence,
)
from .compiler import (
    ABSOLUTE,
    CompileError,
    RELATIVE,
    compile_rule_absolute,
    compile_rule_relative,
    save_formula,
)
from .experiment import (
    CostModelParams,
    ExperimentConfig,
    ExperimentError,
    cost_model,
    format_csv,
    prop1_sweep,
    run_experiment,
    write_csv,
)
from .learner import LearnerError, evaluate_model, load_model
from .relational import RuleError, VocabularyError, get_rule, load_rules, load_vocabulary
from .scenegen import GeneratorError, generate_multi_dataset, load_spec, sample_scene
from .textfront import (
    ParseError,
    augment_linguistic,
    build_vocabulary,
    default_lexicon,
    load_lexicon,
    parse_controlled_text,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_CONFIG_ERRORS = (ExperimentError, GeneratorError, CompileError, LearnerError, ChainError)
_DATA_ERRORS = (VocabularyError, RuleError, CodecError, ParseError, FileNotFoundError)


def _out_dir(value: str | None) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get("INTEGRACODE_OUT", "."))


def _load_rule(name_or_path: str, vocab):
    if Path(name_or_path).exists():
        rules = load_rules(name_or_path, vocab)
        if len(rules) != 1:
            raise RuleError(f"{name_or_path} defines {len(rules)} rules; name one")
        return next(iter(rules.values()))
    return get_rule(name_or_path)


def _cmd_gen(args) -> int:
    spec = load_spec(args.spec, rule_files=args.rules)
    scenes = [sample_scene(spec, i) for i in range(args.first_draw, args.first_draw + args.n)]
    out = _out_dir(args.out_dir) / (args.out or "scenes.txt")
    save_scenes(scenes, out)
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    vocab = load_vocabulary(args.vocab) if args.vocab else load_spec(args.spec).vocab
    block_size = args.block_size or (load_spec(args.spec).block_size if args.spec else 6)
    scenes = load_scenes(args.scenes, vocab)
    if not 0 <= args.index < len(scenes):
        raise CodecError(f"scene index {args.index} outside 0..{len(scenes) - 1}")
    seq = encode_scene(scenes[args.index], block_size, vocab)
    if args.out:
        save_sequence(seq, _out_dir(args.out_dir) / args.out)
        print(f"wrote sequence to {_out_dir(args.out_dir) / args.out}")
    else:
        sys.stdout.write(format_sequence(seq))
    return EXIT_OK


def _cmd_parse(args) -> int:
    lexicon = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
    text = Path(args.text).read_text() if Path(args.text).exists() else args.text
    parsed = parse_controlled_text(text, lexicon)
    vocab = build_vocabulary(lexicon, linguistic=args.linguistic)
    seq = encode_scene(parsed.scene, args.block_size, vocab)
    if args.linguistic:
        seq = augment_linguistic(seq, args.near_threshold, lexicon)
    if args.out_scene:
        save_scenes([parsed.scene], _out_dir(args.out_dir) / args.out_scene)
    if args.out:
        save_sequence(seq, _out_dir(args.out_dir) / args.out)
        print(f"wrote sequence to {_out_dir(args.out_dir) / args.out}")
    else:
        sys.stdout.write(format_sequence(seq))
    if parsed.unresolved:
        print(f"unresolved pronouns at token indices: {list(parsed.unresolved)}", file=sys.stderr)
    return EXIT_OK


def _cmd_compile_rule(args) -> int:
    if args.vocab:
        vocab = load_vocabulary(args.vocab)
    elif args.spec:
        vocab = load_spec(args.spec).vocab
    else:
        from .relational import story_vocabulary

        vocab = story_vocabulary()
    rule = _load_rule(args.rule, vocab)
    if args.frame == "rel":
        formula = compile_rule_relative(rule, args.max_offset, target_role=args.target_role)
    else:
        if args.n is None or args.target_position is None:
            raise CompileError("absolute frame needs --n and --target-position")
        formula = compile_rule_absolute(rule, args.n, args.target_position, args.target_role)
    out = _out_dir(args.out_dir) / (args.out or f"{rule.name or 'rule'}.dnf")
    save_formula(formula, out)
    print(f"k={formula.k} terms={formula.n_terms} frame={formula.frame} -> {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = ExperimentConfig(
        spec_path=args.spec,
        target=args.target,
        out_dir=str(_out_dir(args.out_dir)),
        rules_paths=tuple(args.rules),
        learner=args.learner,
        k=args.k,
        max_offset=args.max_offset,
        promotion=args.promotion,
        threshold=args.theta,
        noise_budget=args.noise_budget,
        n_scenes=args.n,
        split=tuple(float(x) for x in args.split.split(",")),
        threads=args.threads,
    )
    result = run_experiment(config)
    for row in result["rows"]:
        print(
            f"{row['target']}: holdout_error={row['holdout_error']} "
            f"eval_error={row['eval_error']} terms={row['terms']}"
        )
    for token, model in result["models"].items():
        if model.stats and model.stats.advised_sample_size:
            print(f"{token}: advised sample size >= {model.stats.advised_sample_size} "
                  f"(consistent-learner bound over {model.stats.harvested_terms} harvested terms)")
    print(f"outputs in {result['out_dir']}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    spec = load_spec(args.spec, rule_files=args.rules)
    models = {m.target_token: m for m in (load_model(p) for p in args.model)}
    attrs = {spec.vocab.attribute(tok.split("^")[0]) for tok in models}
    rows = []
    for token in sorted(models):
        attr = spec.vocab.attribute(token.split("^")[0])
        role = int(token.split("^")[1]) if "^" in token else 1
        datasets = generate_multi_dataset(
            spec, attr, args.n, first_draw=args.first_draw, strip=tuple(attrs), roles=(role,)
        )
        metrics = evaluate_model(models[token], datasets[token].examples)
        rows.append({"target": token, **metrics.as_row()})
    if args.out:
        write_csv(rows, _out_dir(args.out_dir) / args.out)
        print(f"wrote {_out_dir(args.out_dir) / args.out}")
    else:
        sys.stdout.write(format_csv(rows))
    return EXIT_OK


def _cmd_infer(args) -> int:
    vocab = load_vocabulary(args.vocab)
    seq = load_sequence(args.sequence, vocab, args.block_size)
    models = {m.target_token: m for m in (load_model(p) for p in args.model)}
    out_seq, entries, flagged = classify_call(seq, models, abstain=args.abstain, radius=args.radius)
    target = _out_dir(args.out_dir) / (args.out or "inferred.seq")
    save_sequence(out_seq, target)
    print(f"{len(entries)} predictions, {len(flagged)} abstained blocks -> {target}")
    return EXIT_OK


def _cmd_chain(args) -> int:
    vocab = load_vocabulary(args.vocab)
    seq = load_sequence(args.sequence, vocab, args.block_size)
    pipeline = load_pipeline(args.pipeline)
    out_seq, trace = chain(seq, pipeline, abstain=args.abstain, radius=args.radius)
    out = _out_dir(args.out_dir) / (args.out or "chained.seq")
    save_sequence(out_seq, out)
    if args.trace:
        save_trace(trace, _out_dir(args.out_dir) / args.trace)
    bound = pipeline.soundness_bound()
    accs = ",".join(f"{a:.3f}" for a in pipeline.accuracies)
    print(f"{len(trace.entries)} predictions -> {out}")
    print(f"stage accuracies [{accs}]; chained-accuracy lower bound {bound:.3f}")
    return EXIT_OK


def _cmd_cost_model(args) -> int:
    report = cost_model(
        CostModelParams(
            embedding_dim=args.d,
            window=args.n,
            block_size=args.h,
            embed_expansion=args.gprime,
            relation_arity=args.r,
        )
    )
    sys.stdout.write(report.format_text())
    if args.out:
        write_csv([dict(report.rows())], _out_dir(args.out_dir) / args.out)
    return EXIT_OK


def _cmd_prop1_suite(args) -> int:
    failures = []

    def on_rule(index, agreement):
        if agreement != 1.0:
            failures.append(index)
        if (index + 1) % 25 == 0:
            print(f"checked {index + 1}/{args.rules} rules", file=sys.stderr)

    rows = prop1_sweep(args.rules, args.scenes, seed=args.seed, on_rule=on_rule)
    if args.out:
        write_csv(rows, _out_dir(args.out_dir) / args.out)
        print(f"wrote {_out_dir(args.out_dir) / args.out}")
    agreement = min(float(r["agreement"]) for r in rows)
    print(f"rules={len(rows)} min_agreement={agreement:.6f} failures={failures or 'none'}")
    return EXIT_OK if not failures else EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="integracode", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(fn=fn)
        p.add_argument("--out-dir", default=None, help="output directory (default: $INTEGRACODE_OUT or .)")
        return p

    p = add("gen", _cmd_gen, "sample scenes from a distribution spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--rules", nargs="*", default=[], help="extra rule files")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--first-draw", type=int, default=0)
    p.add_argument("--out", default=None)

    p = add("encode", _cmd_encode, "encode a stored scene as a block sequence")
    p.add_argument("--scenes", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--spec", default=None, help="spec file supplying vocabulary and block size")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--block-size", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add("parse", _cmd_parse, "parse controlled text into a scene and sequence")
    p.add_argument("--text", required=True, help="text file or literal text")
    p.add_argument("--lexicon", default=None)
    p.add_argument("--block-size", type=int, default=6)
    p.add_argument("--linguistic", action="store_true", help="add proximity and part-of-speech tokens")
    p.add_argument("--near-threshold", type=int, default=2)
    p.add_argument("--out", default=None)
    p.add_argument("--out-scene", default=None)

    p = add("compile-rule", _cmd_compile_rule, "compile a rule to a k-DNF formula")
    p.add_argument("--rule", required=True, help="registry rule name or rule file")
    p.add_argument("--vocab", default=None)
    p.add_argument("--spec", default=None)
    p.add_argument("--frame", choices=["abs", "rel"], default="rel")
    p.add_argument("--max-offset", type=int, default=3)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--target-position", type=int, default=None)
    p.add_argument("--target-role", type=int, default=1)
    p.add_argument("--out", default=None)

    p = add("train", _cmd_train, "generate data, train, evaluate, and write reports")
    p.add_argument("--spec", required=True)
    p.add_argument("--rules", nargs="*", default=[])
    p.add_argument("--target", required=True, help="attribute name, or Attr:role")
    p.add_argument("--learner", choices=["elimination", "winnow"], default="elimination")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--max-offset", type=int, default=3)
    p.add_argument("--promotion", type=float, default=2.0)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--noise-budget", type=int, default=0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--threads", type=int, default=1)

    p = add("eval", _cmd_eval, "evaluate stored models on fresh generated data")
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--rules", nargs="*", default=[])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--first-draw", type=int, default=10_000)
    p.add_argument("--out", default=None)

    p = add("infer", _cmd_infer, "apply models to a sequence (one classifier call)")
    p.add_argument("--sequence", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--block-size", type=int, default=None)
    p.add_argument("--abstain", action="store_true")
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add("chain", _cmd_chain, "run a staged pipeline over a sequence")
    p.add_argument("--sequence", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--pipeline", required=True, help="pipeline manifest (JSON)")
    p.add_argument("--block-size", type=int, default=None)
    p.add_argument("--abstain", action="store_true")
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--trace", default=None)

    p = add("cost-model", _cmd_cost_model, "report the analytic cost comparison")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=int, default=4)
    p.add_argument("--gprime", type=int, default=2)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--out", default=None)

    p = add("prop1-suite", _cmd_prop1_suite, "oracle-equivalence sweep for compiled formulae")
    p.add_argument("--rules", type=int, default=200)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags, which matches the configuration code
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
