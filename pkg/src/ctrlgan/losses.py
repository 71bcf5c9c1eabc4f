"""Differentiable loss terms of the translation objective.

Reduction convention: every pixel loss is a mean over batch and spatial
positions; channel handling is stated per function. Probabilities are clamped
to [EPS, 1-EPS] inside every log, since the objectives are undefined at 0/1.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NumericError, ValidationError
from .networks import extract_features

EPS = 1e-7

_NORMS = ("L1", "L2")
_CYCLE_COUNTS = ("one", "two")


@dataclass
class LossWeights:
    """Coefficients of the weighted-sum objective plus norm/cycle switches.

    ``plus_plain_l1`` adds a whole-image pixel loss on top of the channel-wise
    color loss; it shares ``lambda_color`` since both are reconstruction terms.
    """

    lambda_color: float = 0.0
    lambda_cyc: float = 0.0
    lambda_con: float = 0.0
    lambda_vgg: float = 0.0
    lambda_tv: float = 0.0
    color_norm: str = "L1"
    plus_plain_l1: bool = False
    num_cycles: str = "two"

    def __post_init__(self):
        for name in ("lambda_color", "lambda_cyc", "lambda_con", "lambda_vgg", "lambda_tv"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.color_norm not in _NORMS:
            raise ValidationError(f"color_norm must be one of {_NORMS}")
        if self.num_cycles not in _CYCLE_COUNTS:
            raise ValidationError(f"num_cycles must be one of {_CYCLE_COUNTS}")


@dataclass
class LossReport:
    """Raw per-term values plus the weighted totals of one optimization step."""

    adv_g: object = 0.0
    adv_d: object = 0.0
    color: object = 0.0
    cyc: object = 0.0
    con: object = 0.0
    vgg: object = 0.0
    tv: object = 0.0
    l1: object = 0.0
    total_g: object = 0.0
    total_d: object = 0.0

    FIELDS = ("adv_g", "adv_d", "color", "cyc", "con", "vgg", "tv", "l1", "total_g", "total_d")

    def to_floats(self) -> dict:
        out = {}
        for name in self.FIELDS:
            v = getattr(self, name)
            out[name] = float(v.item() if torch.is_tensor(v) else v)
        return out


def _mean_norm(a: torch.Tensor, b: torch.Tensor, norm: str) -> torch.Tensor:
    if norm == "L1":
        return (a - b).abs().mean()
    return ((a - b) ** 2).mean()


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(EPS, 1.0 - EPS))


def adversarial_objective(real_probs: torch.Tensor, fake_probs: torch.Tensor) -> torch.Tensor:
    """Log-likelihood objective for one discriminator and one direction,
    E[log D(real)] + E[log(1 - D(fake))], mean over batch and patch grid."""
    return _clamped_log(real_probs).mean() + _clamped_log(1.0 - fake_probs).mean()


def _probs(disc, *parts):
    stacked = torch.cat([p for p in parts if p is not None], dim=1)
    response = disc(stacked)
    probs = response.probs if hasattr(response, "probs") else response
    if not torch.isfinite(probs).all():
        raise NumericError("discriminator produced non-finite outputs")
    return probs


def adversarial_terms(d_struct, d_plain, x, c_x, y, c_y, x_fake, y_fake):
    """Generator and discriminator adversarial losses over the enabled
    discriminators and generated directions.

    The structure-guided discriminator scores concat(conditional image,
    structure, candidate); the traditional one scores concat(conditional
    image, candidate). ``adv_d`` is the negated sum of the log-likelihood
    objectives, halved to slow the discriminators relative to the generator.
    ``adv_g`` is the non-saturating form, -E[log D(fake)]. Pass ``x_fake=None``
    when only the y direction is trained.
    """
    if d_struct is None and d_plain is None:
        raise ValidationError("at least one discriminator is required")
    objective = y_fake.new_zeros(())
    gen_term = y_fake.new_zeros(())
    for disc, with_structure in ((d_struct, True), (d_plain, False)):
        if disc is None:
            continue
        cond_y = (x, c_y) if with_structure else (x,)
        fake_y = _probs(disc, *cond_y, y_fake)
        objective = objective + adversarial_objective(_probs(disc, *cond_y, y), fake_y)
        gen_term = gen_term - _clamped_log(fake_y).mean()
        if x_fake is not None:
            cond_x = (y, c_x) if with_structure else (y,)
            fake_x = _probs(disc, *cond_x, x_fake)
            objective = objective + adversarial_objective(_probs(disc, *cond_x, x), fake_x)
            gen_term = gen_term - _clamped_log(fake_x).mean()
    return gen_term, -objective / 2.0


def pixel_loss(y_fake, y, x_fake=None, x=None, norm: str = "L1") -> torch.Tensor:
    """Whole-image reconstruction loss, mean over batch, channels and pixels,
    summed over whichever generated directions are present."""
    if norm not in _NORMS:
        raise ValidationError(f"norm must be one of {_NORMS}")
    loss = _mean_norm(y_fake, y, norm)
    if x_fake is not None:
        loss = loss + _mean_norm(x_fake, x, norm)
    return loss


def color_loss(y_fake, y, x_fake=None, x=None, norm: str = "L1") -> torch.Tensor:
    """Channel-wise reconstruction loss: the r, g and b channels are penalized
    independently and the three channel terms summed, so the gradient of one
    channel never leaks into another."""
    if norm not in _NORMS:
        raise ValidationError(f"norm must be one of {_NORMS}")
    pairs = [(y_fake, y)]
    if x_fake is not None:
        pairs.append((x_fake, x))
    loss = y_fake.new_zeros(())
    for fake, real in pairs:
        if fake.shape[1] != 3 or real.shape[1] != 3:
            raise ValidationError("color loss expects 3-channel images")
        for c in range(3):
            loss = loss + _mean_norm(fake[:, c : c + 1], real[:, c : c + 1], norm)
    return loss


def cycle_loss(generator, x, c_x, y, c_y, num_cycles: str = "two") -> torch.Tensor:
    """Reconstruction consistency through two generator applications:
    L1(x, G(G(x, C_y), C_x)), plus the mirrored composition when two cycles
    are trained."""
    if num_cycles not in _CYCLE_COUNTS:
        raise ValidationError(f"num_cycles must be one of {_CYCLE_COUNTS}")
    x_rec = generator(generator(x, c_y), c_x)
    loss = (x - x_rec).abs().mean()
    if num_cycles == "two":
        y_rec = generator(generator(y, c_x), c_y)
        loss = loss + (y - y_rec).abs().mean()
    return loss


def self_content_loss(generator, x, c_x, y, c_y) -> torch.Tensor:
    """Pushes the generator toward identity when fed an image with its own
    structure: L1(x, G(x, C_x)) + L1(y, G(y, C_y))."""
    return (x - generator(x, c_x)).abs().mean() + (y - generator(y, c_y)).abs().mean()


def perceptual_loss(extractor, layer_id, y, y_fake, x=None, x_fake=None) -> torch.Tensor:
    """Feature-space L1 distance at one tap point, normalized by the tapped
    layer's spatial extent (sum over channels, mean over batch)."""
    loss = y_fake.new_zeros(())
    pairs = [(y, y_fake)]
    if x_fake is not None:
        pairs.append((x, x_fake))
    for real, fake in pairs:
        f_real = extract_features(extractor, real, layer_id)
        f_fake = extract_features(extractor, fake, layer_id)
        h, w = f_real.shape[2], f_real.shape[3]
        loss = loss + (f_real - f_fake).abs().sum(dim=(1, 2, 3)).mean() / (h * w)
    return loss


def tv_loss(img: torch.Tensor) -> torch.Tensor:
    """Total variation: sum of absolute horizontal and vertical forward
    differences over channels and valid positions, mean over batch."""
    dh = (img[:, :, :, 1:] - img[:, :, :, :-1]).abs().sum(dim=(1, 2, 3))
    dv = (img[:, :, 1:, :] - img[:, :, :-1, :]).abs().sum(dim=(1, 2, 3))
    return (dh + dv).mean()


def total_objective(weights: LossWeights, **parts) -> LossReport:
    """Assemble the weighted-sum objective from raw term values.

    Accepts the LossReport term names as keyword arguments (tensors or
    floats); missing terms default to 0. Raises :class:`NumericError` naming
    the first non-finite term.
    """
    known = {"adv_g", "adv_d", "color", "cyc", "con", "vgg", "tv", "l1"}
    unknown = set(parts) - known
    if unknown:
        raise ValidationError(f"unknown loss terms: {sorted(unknown)}")
    vals = {name: parts.get(name, 0.0) for name in known}
    for name, v in vals.items():
        scalar = v.item() if torch.is_tensor(v) else v
        if not torch.isfinite(torch.as_tensor(scalar)):
            raise NumericError(f"loss term {name!r} is non-finite ({scalar})")
    total_g = (
        vals["adv_g"]
        + weights.lambda_color * vals["color"]
        + weights.lambda_cyc * vals["cyc"]
        + weights.lambda_con * vals["con"]
        + weights.lambda_vgg * vals["vgg"]
        + weights.lambda_tv * vals["tv"]
        + weights.lambda_color * vals["l1"]
    )
    return LossReport(total_g=total_g, total_d=vals["adv_d"], **vals)
