"""boxttt — per-sample test-time training for visual question answering.

Frozen grounding and answering backbones are adapted on each test
image–question pair by descending two self-supervised objectives on
small continuous soft prompts: box self-consistency between the original
image and an evidence crop, and cross-view answer consistency against an
EMA teacher.
"""

from .backbones import (
    Backbone,
    CharTokenizer,
    ScriptedBackbone,
    TokenSequence,
    ToyBackbone,
    build_backbone,
    greedy_decode,
    grounding_predict_box,
    teacher_forced_logprobs,
)
from .engine import (
    EngineConfig,
    EpisodeTrace,
    TraceEntry,
    answer_step,
    evidence_step,
    native_answer,
    native_box,
    run_episode,
)
from .errors import (
    BoxtttError,
    ConfigError,
    DataError,
    NumericalError,
    ScriptError,
)
from .evaluation import (
    MetricReport,
    QARecord,
    check_result_table,
    closed_accuracy,
    compute_report,
    dataset_statistics,
    load_dataset,
    load_published_results,
    normalize_answer,
    open_recall,
)
from .geometry import (
    BoundingBox,
    BoxString,
    clip_box,
    crop_and_pad,
    full_image_box,
    parse_box_string,
    resize_nearest,
    serialize_box,
)
from .losses import LossValue, LossWeights, answer_loss, answer_view_loss, box_loss, total_loss
from .prompts import (
    OptimizerConfig,
    SoftPrompt,
    ema_update,
    init_prompt,
    load_prompt,
    prompt_distance,
    prompt_norm,
    save_prompt,
    sgd_step,
    sync_teacher,
)

__version__ = "0.1.0"
