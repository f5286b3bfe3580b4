"""Superficial white matter parcellation from tractography streamlines.

A two-stage point-cloud pipeline: a binary filter separates superficial
from deep streamlines, then a contrastively pretrained classifier
assigns survivors to anatomical clusters or rejects them as outliers.
Pure numpy, deterministic given a seed.
"""

from .datasets import NON_SWM, LabeledDataset
from .errors import (
    BadMagicError,
    FileFormatError,
    GenerationError,
    NonFiniteError,
    ShapeMismatchError,
    SwmparcError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .evaluation import (
    CdaReport,
    CirReport,
    F1Report,
    GridSpec,
    Heatmap,
    IspvReport,
    accuracy,
    cluster_distance_to_atlas,
    cluster_identification_rate,
    confusion_matrix,
    final_class_index,
    inter_subject_variability,
    macro_f1,
    population_heatmap,
    weighted_dice,
)
from .geometry import (
    mdf_distance,
    mdf_min_to_set,
    reflect_bilateral,
    resample,
    resample_many,
    streamline_length,
)
from .network import (
    ClassifierParams,
    EncoderParams,
    GlobalFeature,
    ProjectorParams,
    StageModel,
    classify,
    count_flops,
    deserialize_model,
    encode,
    load_model,
    predict,
    project,
    save_model,
    serialize_model,
)
from .pipeline import (
    ImportanceProfile,
    ParcellationResult,
    parcellate,
    point_importance,
    to_final_labels,
)
from .synthdata import (
    AtlasSpec,
    SyntheticAtlas,
    generate_atlas,
    kfold_split,
    prototype_assignments,
)
from .training import (
    AdamState,
    StageOneConfig,
    StageTwoConfig,
    TrainResult,
    adam_init,
    adam_step,
    cross_entropy_loss,
    supcon_loss,
    train_stage_one,
    train_stage_two,
)

__version__ = "0.1.0"
