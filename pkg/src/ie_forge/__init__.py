"""ie-forge: synthesize, filter, format, and evaluate instruction-driven
text-to-table extraction data."""

__version__ = "0.1.0"

from .tables import (  # noqa: F401
    EmptyHeader,
    NoTableFound,
    Table,
    TableShape,
    parse_table,
    serialize_table,
    table_shape,
)
from .dataset import (  # noqa: F401
    EmptyDataset,
    Instance,
    SchemaError,
    StatsReport,
    TableParseError,
    dataset_statistics,
    load_instances,
    save_instances,
)
from .filters import (  # noqa: F401
    FilterReport,
    FilterThresholds,
    LexicalScorer,
    RawPair,
    apply_filters,
    lexical_entailment_fallback,
)
from .metrics import (  # noqa: F401
    EqualityEmbedder,
    HashingEmbedder,
    InstanceEval,
    aggregate,
    evaluate_instance,
    evaluate_prediction,
    exact_match_f1,
    linearize_content,
    rouge_l_f1,
    soft_match_f1,
)
from .analysis import (  # noqa: F401
    CorrelationReport,
    HumanRating,
    correlation,
    correlate_metrics,
    fleiss_kappa,
)
from .formatter import FormattedExample, format_example  # noqa: F401
from .gateway import ChatRequest, PromptLibrary, render_prompt  # noqa: F401
from .pipeline import PipelineConfig, run_pipeline  # noqa: F401
