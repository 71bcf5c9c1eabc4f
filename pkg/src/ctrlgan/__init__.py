"""Structure-controllable image-to-image translation: one generator conditioned
on a reference image plus a structure map, trained adversarially, with paired
Frechet evaluation metrics."""

from .data import (
    Batch,
    ImageTensor,
    PairedSample,
    StructureKind,
    StructureMap,
    ToyDatasetSpec,
    denormalize,
    generate_toy_dataset,
    iter_batches,
    load_paired_dataset,
    normalize,
    sample_structures,
    split_channels,
)
from .errors import ConfigError, DatasetError, NumericError, ValidationError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_terms,
    color_loss,
    cycle_loss,
    perceptual_loss,
    pixel_loss,
    self_content_loss,
    total_objective,
    tv_loss,
)
from .metrics import (
    FeatureMatrix,
    GaussianStats,
    discrete_frechet,
    evaluate_pairs,
    fid,
    frd,
    frd_from_features,
    gaussian_stats,
    pooled_feature_vectors,
    psnr,
    read_features,
    sharpness_difference,
    ssim,
    write_features,
    write_metric_csv,
)
from .networks import (
    ClassifierLogitsExtractor,
    ConvStackExtractor,
    DiscriminatorConfig,
    FeatureExtractor,
    GeneratorConfig,
    IdentityExtractor,
    ModuleExtractor,
    PatchResponse,
    build_generator,
    build_patch_discriminator,
    discriminator_forward,
    extract_features,
    generator_forward,
    make_resnet50_extractor,
    patch_grid_size,
)
from .training import (
    PRESETS,
    AblationSpec,
    TrainConfig,
    TrainState,
    configure_ablation,
    resolve_config,
    train,
    train_step,
    translate,
)

__version__ = "0.1.0"
