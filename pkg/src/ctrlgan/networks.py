"""Generator, patch discriminators, and the pluggable feature extractor.

The generator follows the residual encoder/decoder layout common to image
translation work: a 7x7 stem, two stride-2 downsampling convs, a stack of
residual blocks with instance normalization and reflection padding, two
stride-2 transposed-conv upsampling layers, and a 7x7 head ending in Tanh.
The discriminator is the standard 70x70 patch classifier with a Sigmoid head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .data import tensor_of
from .errors import ConfigError, ValidationError


@dataclass
class GeneratorConfig:
    num_res_blocks: int = 9
    base_channels: int = 64
    input_channels: int = 6  # image channels + structure channels
    output_channels: int = 3

    def __post_init__(self):
        if self.num_res_blocks < 1:
            raise ValidationError("num_res_blocks must be >= 1")
        if self.base_channels < 8:
            raise ValidationError("base_channels must be >= 8")


@dataclass
class DiscriminatorConfig:
    input_channels: int = 6
    base_channels: int = 64
    num_downsamples: int = 3  # stride-2 convolutions; 3 gives the 70x70 receptive field


@dataclass
class PatchResponse:
    """Grid of per-patch real/fake probabilities plus their average."""

    probs: torch.Tensor

    @property
    def mean_score(self) -> torch.Tensor:
        return self.probs.mean()


def patch_grid_size(input_size: int, num_downsamples: int = 3) -> int:
    """Output grid edge for a square input: 4x4 kernels, pad 1, stride 2 for the
    downsampling convs, then two stride-1 layers."""
    size = input_size
    for _ in range(num_downsamples):
        size = (size + 2 * 1 - 4) // 2 + 1
    for _ in range(2):
        size = size + 2 * 1 - 4 + 1
    return size


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Maps a conditional image concatenated with a structure map to an image."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.input_channels, ch, kernel_size=7),
            nn.InstanceNorm2d(ch),
            nn.ReLU(inplace=True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(ch * mult, ch * mult * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(ch * mult * 2),
                nn.ReLU(inplace=True),
            ]
        layers += [ResidualBlock(ch * 4) for _ in range(cfg.num_res_blocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(
                    ch * mult, ch * mult // 2, kernel_size=3, stride=2, padding=1, output_padding=1
                ),
                nn.InstanceNorm2d(ch * mult // 2),
                nn.ReLU(inplace=True),
            ]
        layers += [
            nn.ReflectionPad2d(3),
            nn.Conv2d(ch, cfg.output_channels, kernel_size=7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, img: torch.Tensor, structure: torch.Tensor | None) -> torch.Tensor:
        if structure is not None and (
            img.shape[2:] != structure.shape[2:] or img.shape[0] != structure.shape[0]
        ):
            raise ValidationError(
                f"image {tuple(img.shape)} and structure {tuple(structure.shape)} are misaligned"
            )
        if img.shape[2] % 4 != 0 or img.shape[3] % 4 != 0:
            raise ValidationError(
                f"spatial dims must be multiples of 4, got {img.shape[2]}x{img.shape[3]}"
            )
        # Image channels first, then structure; structure may be omitted for
        # unconditioned ablations.
        stacked = img if structure is None else torch.cat([img, structure], dim=1)
        if stacked.shape[1] != self.cfg.input_channels:
            raise ValidationError(
                f"expected {self.cfg.input_channels} stacked channels, got {stacked.shape[1]}"
            )
        return self.model(stacked)


class PatchDiscriminator(nn.Module):
    """70x70 patch classifier emitting a grid of probabilities via Sigmoid."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        layers = [
            nn.Conv2d(cfg.input_channels, ch, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        mult = 1
        for _ in range(cfg.num_downsamples - 1):
            layers += [
                nn.Conv2d(ch * mult, ch * mult * 2, kernel_size=4, stride=2, padding=1),
                nn.InstanceNorm2d(ch * mult * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            mult *= 2
        layers += [
            nn.Conv2d(ch * mult, ch * mult * 2, kernel_size=4, stride=1, padding=1),
            nn.InstanceNorm2d(ch * mult * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(ch * mult * 2, 1, kernel_size=4, stride=1, padding=1),
            nn.Sigmoid(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, stacked_input: torch.Tensor) -> PatchResponse:
        if stacked_input.shape[1] != self.cfg.input_channels:
            raise ValidationError(
                f"discriminator expects {self.cfg.input_channels} channels, "
                f"got {stacked_input.shape[1]}"
            )
        return PatchResponse(probs=self.model(stacked_input))


def _init_weights(module: nn.Module):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def _build_seeded(factory, seed: int):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = factory()
        net.apply(_init_weights)
    return net


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    """Construct a generator with deterministic N(0, 0.02) weight init."""
    return _build_seeded(lambda: Generator(cfg), seed)


def build_patch_discriminator(cfg: DiscriminatorConfig, seed: int = 0) -> PatchDiscriminator:
    return _build_seeded(lambda: PatchDiscriminator(cfg), seed)


def generator_forward(generator: Generator, img, structure) -> torch.Tensor:
    img = tensor_of(img)
    structure = None if structure is None else tensor_of(structure)
    return generator(img, structure)


def discriminator_forward(disc: PatchDiscriminator, stacked_input: torch.Tensor) -> PatchResponse:
    return disc(stacked_input)


# ---------------------------------------------------------------------------
# Feature extractors
# ---------------------------------------------------------------------------


class FeatureExtractor:
    """Deterministic image -> feature-map mapping with declared tap points.

    ``layer_ids`` lists the valid tap points; ``feature_dims(layer_id, (h, w))``
    states the (channels, height, width) the extractor will return for an input
    of the given spatial size.
    """

    layer_ids: list

    def feature_dims(self, layer_id, input_hw):
        raise NotImplementedError

    def extract(self, img: torch.Tensor, layer_id) -> torch.Tensor:
        raise NotImplementedError

    def check_layer(self, layer_id):
        if layer_id not in self.layer_ids:
            raise ConfigError(f"unknown layer id {layer_id!r}; available: {self.layer_ids}")


class IdentityExtractor(FeatureExtractor):
    """Returns the image itself; useful as a degenerate perceptual feature space."""

    layer_ids = [0]

    def feature_dims(self, layer_id, input_hw):
        self.check_layer(layer_id)
        return (3, input_hw[0], input_hw[1])

    def extract(self, img, layer_id):
        self.check_layer(layer_id)
        return img


class ConvStackExtractor(FeatureExtractor):
    """Three fixed-seed convolution stages with tanh nonlinearities.

    Weights are random projections frozen at construction, so the extractor is
    a deterministic function of its inputs and needs no pretrained files.
    Layer ids 1..3 tap the output of each stage; spatial dims halve after
    stages 2 and 3.
    """

    layer_ids = [1, 2, 3]

    def __init__(self, seed: int = 0, in_channels: int = 3, dtype=torch.float32):
        widths = [in_channels, 8, 16, 32]
        strides = [1, 2, 2]
        self.stages = []
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for i in range(3):
                conv = nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, stride=strides[i], padding=1)
                nn.init.normal_(conv.weight, 0.0, 0.2)
                nn.init.zeros_(conv.bias)
                conv = conv.to(dtype)
                conv.requires_grad_(False)
                self.stages.append(conv)
        self._widths = widths[1:]
        self._strides = strides

    def feature_dims(self, layer_id, input_hw):
        self.check_layer(layer_id)
        h, w = input_hw
        for i in range(layer_id):
            s = self._strides[i]
            h, w = (h + 2 - 3) // s + 1, (w + 2 - 3) // s + 1
        return (self._widths[layer_id - 1], h, w)

    def extract(self, img, layer_id):
        self.check_layer(layer_id)
        out = img
        for i in range(layer_id):
            out = torch.tanh(self.stages[i](out))
        return out


class ModuleExtractor(FeatureExtractor):
    """Adapter exposing tap points of an arbitrary ``nn.Sequential``-style module.

    ``taps`` maps layer ids to the index (exclusive) of the submodule whose
    output is returned. Weights can be loaded from a state-dict file, which is
    how externally pretrained networks plug in.
    """

    def __init__(self, module: nn.Module, taps: dict, weights_path=None):
        self.module = module
        self.taps = dict(taps)
        self.layer_ids = list(self.taps)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            self.module.load_state_dict(state)
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)

    def feature_dims(self, layer_id, input_hw):
        self.check_layer(layer_id)
        probe = torch.zeros(1, 3, input_hw[0], input_hw[1])
        out = self.extract(probe, layer_id)
        return tuple(out.shape[1:])

    def extract(self, img, layer_id):
        self.check_layer(layer_id)
        out = img
        for i, sub in enumerate(self.module):
            out = sub(out)
            if i + 1 == self.taps[layer_id]:
                return out
        raise ConfigError(f"tap index {self.taps[layer_id]} beyond module depth")


class ClassifierLogitsExtractor(FeatureExtractor):
    """Wraps an image classifier; the single tap returns its logits as a 1x1
    spatial feature map, so pooled feature vectors equal the logits."""

    layer_ids = ["logits"]

    def __init__(self, classifier: nn.Module, num_logits: int):
        self.classifier = classifier.eval()
        self.num_logits = num_logits
        for p in self.classifier.parameters():
            p.requires_grad_(False)

    def feature_dims(self, layer_id, input_hw):
        self.check_layer(layer_id)
        return (self.num_logits, 1, 1)

    def extract(self, img, layer_id):
        self.check_layer(layer_id)
        return self.classifier(img).reshape(img.shape[0], self.num_logits, 1, 1)


def make_resnet50_extractor(weights_path=None) -> ClassifierLogitsExtractor:
    """Adapter around a torchvision ResNet50 with its 1000-way head, loading
    weights from a local state-dict file (random but seeded init otherwise)."""
    from torchvision.models import resnet50

    with torch.random.fork_rng():
        torch.manual_seed(0)
        net = resnet50(weights=None)
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    return ClassifierLogitsExtractor(net, num_logits=1000)


def extract_features(extractor: FeatureExtractor, img: torch.Tensor, layer_id) -> torch.Tensor:
    return extractor.extract(img, layer_id)
