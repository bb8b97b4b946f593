"""Relational scenes as augmented token blocks: encoding, k-DNF compilation,
PAC learning, and sound chaining of learned rules."""

__version__ = "0.1.0"

from .relational import (
    Attribute,
    AugmentedVocabulary,
    ConjunctiveExpression,
    CoreRule,
    Entity,
    GroundAtom,
    Scene,
    apply_rule,
    compose_rules,
    define_vocabulary,
    eval_conjunctive,
    make_scene,
)
from .codec import (
    BitSequence,
    BlockPresenceFeatures,
    IntegracodedSequence,
    decode_sequence,
    encode_scene,
    to_bit_sequence,
    to_block_presence,
)
from .compiler import (
    FeatureLiteral,
    KDnfFormula,
    compile_rule_absolute,
    compile_rule_relative,
    eval_dnf,
)
from .learner import (
    EvalMetrics,
    LabeledExample,
    LearnedModel,
    evaluate_model,
    learn_elimination,
    learn_winnow,
)
from .chainer import (
    ChainTrace,
    Stage,
    StagePipeline,
    chain,
    classify_call,
    detect_repeated_relations,
    soundness_bound,
)
from .scenegen import (
    DistributionSpec,
    LabeledDataset,
    craft_confusion_case,
    generate_dataset,
    sample_scene,
)
from .textfront import Lexicon, augment_linguistic, parse_controlled_text, resolve_coreference
from .experiment import CostModelParams, ExperimentConfig, cost_model, run_experiment
