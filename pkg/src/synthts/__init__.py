"""Synthetic time-series generation via functional embeddings, text-encoded
tabular generation, online filtering, and similarity scoring."""

__version__ = "0.1.0"

from .core import (
    DataError,
    InstanceSet,
    RawSeries,
    ScalerState,
    apply_scaler,
    fit_scaler,
    invert_scaler,
    load_dataset,
)
from .embedding import (
    BasisSystem,
    EmbeddingTable,
    embed,
    fit_basis,
    fit_fastica,
    fit_fpc,
    reconstruct,
    select_k,
    variance_retained,
)
from .segmentation import (
    NoPeriodicityError,
    SegmentationPlan,
    autocorrelation,
    estimate_period,
    segment,
)
from .textcodec import (
    ParsedRow,
    PromptTemplate,
    encode_finetune,
    make_inference_prompt,
    parse_generation,
    sample_permutation,
)
from .backends import (
    BackendError,
    FaultModes,
    ReferenceBackend,
    RemoteBackend,
    SamplingParams,
    TrainingParams,
)
from .filtering import (
    BatchDisposition,
    FilterState,
    RejectReason,
    StopDecision,
    diversity_score,
    filter_batch,
    norm_bounds,
    should_stop,
)
from .metrics import (
    MetricReport,
    compute_report,
    normalize_and_rank,
)
from .pipeline import ConfigError, RunConfig, StageError, run_pipeline
