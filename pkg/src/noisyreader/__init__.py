"""Noisy-channel sentence processing toolkit: SMC inference over intended
sentences, experimental stimulus compilation, mouse-trajectory reading
measures, and masked-prediction PMI analysis."""

from .lexicon import (
    Vocabulary,
    NeighborIndex,
    build_vocabulary,
    edit_distance,
    morph_variants,
    neighbors,
)
from .noise import Action, ActionPrior, NoiseConfig, NoiseModel, action_probs
from .prior import NGramModel, RemotePrior, SmoothingConfig, train_ngram
from .smc import (
    Ensemble,
    InferenceConfig,
    Particle,
    PosteriorSummary,
    conditional_trigger,
    enumerate_exact,
    init_ensemble,
    run_inference,
    second_pass_rejuvenate,
    step,
    summarize,
    surprisal_trace,
    tv_distance,
)
from .stimuli import (
    ConditionVariant,
    ExperimentList,
    Item,
    expand_item,
    generate_lists,
    validate_item,
)
from .measures import (
    Box,
    FixationEvent,
    MeasureConfig,
    ReadingDataset,
    TrialLog,
    WordMeasures,
    aggregate,
    apply_exclusions,
    build_dataset,
    compute_measures,
    detect_fixations,
    response_summary,
)
from .pmi import (
    ItemPmiAggregate,
    LookupOracle,
    MaskedQueryPair,
    PmiScore,
    RemoteMaskedOracle,
    aggregate_item,
    build_queries,
    pmi_bits,
    wilcoxon_signed_rank,
)

__version__ = "0.1.0"
