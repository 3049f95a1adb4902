"""Two-stage breast DCE-MRI classification pipeline at desk scale.

Stage 1 localizes the left and right breasts on a low-resolution
segmentation and crops high-resolution ROIs; stage 2 classifies each ROI
with a 3D CNN, aggregates per case, and evaluates with
leave-one-center-out cross-validation. A deterministic synthetic phantom
generator stands in for clinical data, so every component is testable
end-to-end on a laptop CPU.
"""

from .augment import ALL_KINDS, AugPipeline, TransformSpec, apply_pipeline, apply_transform, default_pipeline
from .config import (
    CHANNEL_SOURCES,
    config_hash,
    load_config,
    make_aug_pipeline,
    make_backbone,
    make_head,
    make_phantom_spec,
    make_roi_config,
    make_strategy,
    make_task,
    make_train_config,
    resolve_config,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateROIError,
    NoForegroundError,
    ProtocolError,
    RunFailedError,
    TrainingDivergedError,
    TransferError,
    UndefinedMetricError,
)
from .evaluation import (
    CLASS_NAMES,
    ClassDistribution,
    FoldMetrics,
    SplitPlan,
    aggregate_case_scores,
    auroc,
    evaluate_fold,
    macro_auroc_ovr,
    make_loco_splits,
    map_binary_to_three_class,
    per_class_auroc,
)
from .experiment import (
    ExperimentGrid,
    RunManifest,
    TrialData,
    ablation_axes,
    build_table,
    collect_manifests,
    grid_cells,
    prepare_trial_data,
    pretrain_segmenter,
    report_from_manifests,
    run_grid,
    run_trial,
    untrained_fold_metrics,
    write_table,
)
from .io import load_standard_volume, load_volume, save_volume
from .models import (
    BACKBONE_KINDS,
    BackboneConfig,
    CheckpointManifest,
    Classifier3d,
    HeadConfig,
    SEBlock3d,
    Segmenter3d,
    TransferReport,
    build_model,
    build_segmenter,
    count_parameters,
    load_checkpoint,
    make_predict_fn,
    prepare_input,
    save_checkpoint,
    transfer_encoder_weights,
)
from .phantom import (
    BACKGROUND_INTENSITY,
    BENIGN_KINETICS,
    CHANNEL_NAMES,
    LABELS,
    MALIGNANT_KINETICS,
    TISSUE_ENHANCEMENT,
    TISSUE_INTENSITY,
    CaseRecord,
    CenterProfile,
    PhantomSpec,
    default_centers,
    generate_case,
    generate_dataset,
    load_case,
    load_manifest,
    load_dataset,
    save_dataset,
    synthesize_noise_channel,
)
from .roi import (
    BreastRoi,
    RoiConfig,
    bbox_of,
    connected_components,
    extract_case_rois,
    extract_rois,
    map_box,
    map_box_to_grid,
    margin_to_voxels,
    split_left_right,
)
from .seeding import derive_seed, rng_from
from .training import (
    BINARY_LESION,
    THREE_CLASS,
    FinetuneStrategy,
    SegTrainConfig,
    TaskFormulation,
    TrainConfig,
    TrainLog,
    TrainSample,
    dice_score,
    lr_at,
    relabel_for_binary,
    train,
    train_segmenter,
    trainable_parameters,
    warmup_high,
    warmup_low,
)
from .volume import (
    BBox3D,
    Volume3D,
    crop,
    mask_background,
    resample,
    resample_to_shape,
    sample_at_voxel_coords,
    stack_channels,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
