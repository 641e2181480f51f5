"""Robust sign perturbations: synthesis against a small convolutional
classifier under a distribution of viewpoint and lighting conditions, plus
stationary and drive-by success-rate evaluation.  Everything runs at desk
scale on procedurally generated sign imagery."""

from .attack import (
    AttackConfig,
    Mask,
    Perturbation,
    PrintablePalette,
    DEFAULT_PALETTE,
    apply_perturbation,
    discover_mask,
    export_sticker_sheet,
    load_palette,
    load_perturbation,
    nps,
    objective,
    run_attack,
    save_perturbation,
)
from .errors import (
    DivergenceError,
    NonFiniteError,
    PremiseError,
    ShapeError,
    SignAdvError,
    ValidationError,
    WeightFormatError,
)
from .evaluate import (
    ConditionPair,
    DriveByConfig,
    EvalReport,
    drive_by_eval,
    randomized_crop_eval,
    simulate_drive_by,
    stationary_success_rate,
)
from .model import (
    ModelParameters,
    TrainConfig,
    forward,
    init_parameters,
    load_weights,
    predict,
    save_weights,
    train,
)
from .optim import AdamState, adam_step
from .signs import (
    CornerAnnotation,
    REFERENCE_CLASSES,
    SignClassSpec,
    generate_dataset,
    load_image_folder,
    render_sign,
    sign_region_mask,
)
from .transforms import (
    DistributionConfig,
    TransformSample,
    sample_transform,
    synthesize_instance,
    warp_perturbation,
    warp_perturbation_adjoint,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AdamState",
    "ConditionPair",
    "CornerAnnotation",
    "DEFAULT_PALETTE",
    "DistributionConfig",
    "DivergenceError",
    "DriveByConfig",
    "EvalReport",
    "Mask",
    "ModelParameters",
    "NonFiniteError",
    "Perturbation",
    "PremiseError",
    "PrintablePalette",
    "REFERENCE_CLASSES",
    "ShapeError",
    "SignAdvError",
    "SignClassSpec",
    "TrainConfig",
    "TransformSample",
    "ValidationError",
    "WeightFormatError",
    "adam_step",
    "apply_perturbation",
    "discover_mask",
    "drive_by_eval",
    "export_sticker_sheet",
    "forward",
    "generate_dataset",
    "init_parameters",
    "load_image_folder",
    "load_palette",
    "load_perturbation",
    "load_weights",
    "nps",
    "objective",
    "predict",
    "randomized_crop_eval",
    "render_sign",
    "run_attack",
    "sample_transform",
    "save_perturbation",
    "save_weights",
    "sign_region_mask",
    "simulate_drive_by",
    "stationary_success_rate",
    "synthesize_instance",
    "train",
    "warp_perturbation",
    "warp_perturbation_adjoint",
]
