"""Language-debiased image-text matching scores and their evaluation suite.

The package computes four similarity families over pre-extracted model
outputs (cosine of embeddings, matching-classifier probability, token
likelihood, and marginal-corrected per-token log-ratios), estimates the
text-only marginal a captioning model never exposes directly, and
evaluates everything with retrieval, gender-balance, foil, color-bias,
and two-image/two-caption compositionality metrics.  An exactly
enumerable toy oracle validates every scoring and estimation path.
"""

__version__ = "0.1.0"

from .adapter_client import AdapterClient
from .dataio import (
    NULL_IMAGE_ID,
    ConditionalTable,
    TableEntry,
    load_color_manifest,
    load_foil_manifest,
    load_results,
    load_retrieval_manifest,
    load_score_matrix,
    load_table,
    load_winoground_manifest,
    save_results,
    save_score_matrix,
    save_table,
    sha256_file,
)
from .errors import (
    AdapterError,
    AdapterProtocolError,
    AdapterTimeoutError,
    AlignmentError,
    ConstructionError,
    DegenerateVectorError,
    DimensionError,
    EmptyDatasetError,
    EmptySampleError,
    EmptySequenceError,
    InvalidInputError,
    MassrankError,
    MissingEntryError,
    ModelDomainError,
    TableFormatError,
    WeightError,
)
from .gender import (
    GenderLexicon,
    classify_caption,
    default_lexicon,
    load_lexicon,
    neutralize_caption,
)
from .marginal import (
    METHOD_MC_AVG_LOG,
    METHOD_MC_LOG_MEAN_EXP,
    METHOD_NULL,
    MarginalEstimate,
    caption_rng,
    mc_marginal_avg_log,
    mc_marginal_log_mean_exp,
    null_marginal,
    sample_marginal,
)
from .metrics import (
    CandidateRecord,
    ColorSample,
    FoilSample,
    ParetoPoint,
    QueryRecord,
    RetrievalDataset,
    WinogroundSample,
    bias_at_k,
    color_bias_stats,
    pairwise_ranking_accuracy,
    pareto_frontier,
    recall_at_k,
    winoground_scores,
    winoground_tag_breakdown,
)
from .ranking import Ranking, ScoreMatrix, rank, two_stage_rerank
from .similarity import (
    LOGP_TOLERANCE,
    ScoreValue,
    decompose_loglik,
    itc_score,
    itm_score,
    itm_score_vqa,
    mass_score,
    tl_score,
)
from .toy import (
    BiasedFamilySpec,
    ToyModel,
    exact_conditional,
    exact_marginal,
    exact_pmi,
    export_family,
    export_tables,
    make_biased_family,
    random_model,
    sample_texts,
    sequence_logprob,
    with_designated_null,
)
