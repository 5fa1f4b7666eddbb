"""Few-shot unsafe-prompt detection via gradient co-occurrence analysis.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

from ._core import (  # noqa: F401
    AblationRow,
    ClassifierConfig,
    ComponentScore,
    ConfusionCounts,
    Decision,
    EvalOptions,
    EvalRun,
    Granularity,
    LabeledPrompt,
    MetricsReport,
    ModelConfig,
    ModelWeights,
    PRPoint,
    ProcessedVector,
    ProcessingOptions,
    PromptScore,
    ReferenceProvenance,
    ReferencePrompts,
    ReferenceSet,
    ResponseRow,
    ResponseSweep,
    ScoreBreakdown,
    ScoreMethod,
    SweepPoint,
    TrainResult,
    __version__,
    aggregate_scores,
    auprc,
    build_references,
    calibrate_threshold,
    co_occurrence,
    compliance_loss_value,
    cosine_baseline_score,
    default_compliance_responses,
    detokenize,
    init_weights,
    load_checkpoint,
    load_jsonl,
    load_reference_prompts,
    load_references,
    param_gradients,
    prf1_at_threshold,
    process_component,
    references_digest,
    relative_unsafe,
    run_ablation,
    run_eval,
    save_checkpoint,
    save_references,
    score_prompt,
    sweep_compliance_responses,
    sweep_reference_count,
    tokenize,
    train_toy,
    weights_digest,
)
