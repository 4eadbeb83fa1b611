from cor.pipeline.config import PipelineConfig
from cor.pipeline.embed import ColorHistogramEmbedder, Embedder, cosine
from cor.pipeline.raw import RawDataset, RawImage, RawObject, load_raw, rasterize
from cor.pipeline.run import STAGES, AuditLog, PipelineResult, run_pipeline
from cor.pipeline.steps import (
    Pair,
    Rejection,
    StepResult,
    Target,
    Triplet,
    cap_by_source,
    enumerate_targets,
    instance_census,
    step1_candidate_filter,
    step1_filter,
    step2_quality_check,
    step3_category_split,
    step4_train_test_split,
    step5_reference_select,
    step6_target_select,
    step7_pair_construct,
    step8_text_generate,
    step9_positive_verify,
    step10_false_match_reject,
)
from cor.pipeline.vlm import (
    ENDPOINT_ENV,
    HttpVlmClient,
    ScriptedVlm,
    VlmClient,
    load_template,
    parse_binary,
    parse_changes,
    render_prompt,
)
