"""Alternating min-max training loop, hyper-parameter presets, and ablations.

One step first updates the generator on the full weighted objective with the
discriminators frozen, then updates both discriminators on the halved
log-likelihood objective with the generator frozen. Adam with betas
(0.5, 0.999) throughout, no learning-rate decay.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .data import iter_batches, tensor_of
from .errors import ConfigError, NumericError, ValidationError
from .losses import LossReport, LossWeights, total_objective
from .networks import (
    ConvStackExtractor,
    DiscriminatorConfig,
    GeneratorConfig,
    build_generator,
    build_patch_discriminator,
)

PRESETS = {
    "gesture": dict(lambda_cyc=0.1, lambda_con=0.01, lambda_vgg=1000.0, lambda_color=800.0, lambda_tv=1e-6),
    "crossview": dict(lambda_cyc=0.1, lambda_con=100.0, lambda_vgg=100.0, lambda_color=100.0, lambda_tv=1e-6),
}

# Fixed seed of the frozen perceptual feature stack, so the objective does not
# depend on the run seed.
PERCEPTUAL_EXTRACTOR_SEED = 1234
PERCEPTUAL_LAYER_DEFAULT = 2  # mid-depth tap


@dataclass
class AblationSpec:
    """Loss/discriminator toggles of one ablation row."""

    structure_input: bool = True
    use_struct_d: bool = True
    use_plain_d: bool = False
    cycle: bool = False
    color_target: str | None = None  # None, "y" or "x"
    color_norm: str = "L1"
    plain_pixel: str | None = None  # None, "L1" or "L2"
    content: bool = False
    perceptual: bool = False
    tv: bool = False
    two_directions: bool = True  # whether the x' mapping is trained at all


_BASE = dict(structure_input=True, use_struct_d=True, use_plain_d=False, cycle=True)

ABLATION_ROWS = {
    "B": AblationSpec(structure_input=False, use_struct_d=False, use_plain_d=True, two_directions=False),
    "C": AblationSpec(two_directions=False),
    "D": AblationSpec(**_BASE),
    "E11": AblationSpec(**_BASE, color_target="x"),
    "E12": AblationSpec(**_BASE, plain_pixel="L1"),
    "E13": AblationSpec(**_BASE, plain_pixel="L2"),
    "E14": AblationSpec(**_BASE, color_target="y"),
    "E15": AblationSpec(**_BASE, color_target="y", color_norm="L2", plain_pixel="L1"),
    "E16": AblationSpec(**_BASE, color_target="y", plain_pixel="L1"),
    "E21": AblationSpec(**_BASE),
    "E22": AblationSpec(structure_input=True, use_struct_d=True, use_plain_d=True, cycle=True),
    "E3": AblationSpec(**_BASE, content=True),
    "E41": AblationSpec(**_BASE, perceptual=True),
    "E42": AblationSpec(**_BASE, perceptual=True, tv=True),
    "F": AblationSpec(
        structure_input=True,
        use_struct_d=True,
        use_plain_d=True,
        cycle=True,
        color_target="y",
        plain_pixel="L1",
        content=True,
        perceptual=True,
        tv=True,
    ),
}


def configure_ablation(row: str) -> AblationSpec:
    """Toggles for one row of the ablation ladder; row A (unpaired training)
    is out of scope."""
    if row == "A":
        raise ConfigError("ablation row A (unpaired training) is unsupported")
    if row not in ABLATION_ROWS:
        raise ConfigError(f"unknown ablation row {row!r}; known: {sorted(ABLATION_ROWS)}")
    return dataclasses.replace(ABLATION_ROWS[row])


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    epochs: int = 1
    seed: int = 0
    preset: str = "custom"
    ablation: str | None = None
    # plumbing / architecture
    structure_channels: int = 3
    base_channels: int = 64
    num_res_blocks: int = 9
    disc_base_channels: int = 64
    structure_input: bool = True
    use_struct_d: bool = True
    use_plain_d: bool = False
    color_target: str | None = "y"
    plain_pixel_norm: str = "L1"
    perceptual_layer: int = PERCEPTUAL_LAYER_DEFAULT
    two_directions: bool = True
    augment: bool = False
    checkpoint_interval: int = 0  # steps; 0 means only at the end

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.preset not in ("gesture", "crossview", "custom"):
            raise ValidationError(f"unknown preset {self.preset!r}")
        if self.color_target not in (None, "y", "x"):
            raise ValidationError("color_target must be None, 'y' or 'x'")


def resolve_config(cfg: TrainConfig) -> TrainConfig:
    """Apply preset lambda values and ablation toggles, returning a concrete copy.

    The preset pins the lambda magnitudes; the ablation row decides which terms
    are active (inactive terms get weight 0) and which discriminators exist.
    """
    cfg = dataclasses.replace(cfg, weights=dataclasses.replace(cfg.weights))
    if cfg.preset in PRESETS:
        for name, value in PRESETS[cfg.preset].items():
            setattr(cfg.weights, name, value)
    if cfg.ablation is None:
        return cfg
    row = configure_ablation(cfg.ablation)
    w = cfg.weights
    w.lambda_cyc = w.lambda_cyc if row.cycle else 0.0
    w.lambda_con = w.lambda_con if row.content else 0.0
    w.lambda_vgg = w.lambda_vgg if row.perceptual else 0.0
    w.lambda_tv = w.lambda_tv if row.tv else 0.0
    if row.color_target is None:
        w.lambda_color = 0.0 if row.plain_pixel is None else w.lambda_color
    w.color_norm = row.color_norm
    w.plus_plain_l1 = row.plain_pixel is not None
    w.num_cycles = "two" if (row.two_directions and w.num_cycles == "two") else "one"
    cfg.structure_input = row.structure_input
    cfg.use_struct_d = row.use_struct_d
    cfg.use_plain_d = row.use_plain_d
    cfg.color_target = row.color_target
    cfg.plain_pixel_norm = row.plain_pixel or "L1"
    cfg.two_directions = row.two_directions and w.num_cycles == "two"
    return cfg


class TrainState:
    """Networks, their optimizers, and the step counter; the single owner of
    all parameter mutation."""

    def __init__(self, cfg: TrainConfig):
        cfg = resolve_config(cfg)
        self.cfg = cfg
        c_s = cfg.structure_channels if cfg.structure_input else 0
        self.gen_cfg = GeneratorConfig(
            num_res_blocks=cfg.num_res_blocks,
            base_channels=cfg.base_channels,
            input_channels=3 + c_s,
        )
        self.generator = build_generator(self.gen_cfg, seed=cfg.seed)
        self.d_struct = self.d_plain = None
        self.ds_cfg = self.dp_cfg = None
        if cfg.use_struct_d:
            if not cfg.structure_input:
                raise ValidationError("structure-guided discriminator requires structure input")
            self.ds_cfg = DiscriminatorConfig(
                input_channels=6 + cfg.structure_channels, base_channels=cfg.disc_base_channels
            )
            self.d_struct = build_patch_discriminator(self.ds_cfg, seed=cfg.seed + 1)
        if cfg.use_plain_d:
            self.dp_cfg = DiscriminatorConfig(
                input_channels=6, base_channels=cfg.disc_base_channels
            )
            self.d_plain = build_patch_discriminator(self.dp_cfg, seed=cfg.seed + 2)
        if self.d_struct is None and self.d_plain is None:
            raise ValidationError("config enables no discriminator")

        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr, betas=betas)
        self.opt_ds = (
            torch.optim.Adam(self.d_struct.parameters(), lr=cfg.lr, betas=betas)
            if self.d_struct
            else None
        )
        self.opt_dp = (
            torch.optim.Adam(self.d_plain.parameters(), lr=cfg.lr, betas=betas)
            if self.d_plain
            else None
        )
        self.extractor = ConvStackExtractor(seed=PERCEPTUAL_EXTRACTOR_SEED)
        self.step = 0

    # -- checkpoint plumbing ------------------------------------------------

    def _networks(self):
        out = [("g", self.generator, self.opt_g)]
        if self.d_struct is not None:
            out.append(("ds", self.d_struct, self.opt_ds))
        if self.d_plain is not None:
            out.append(("dp", self.d_plain, self.opt_dp))
        return out

    def save(self, path) -> None:
        tensors, scalars = {}, {"step": self.step, "adam_steps": {}}
        for prefix, net, opt in self._networks():
            for pname, param in net.named_parameters():
                tensors[f"{prefix}.{pname}"] = param.data
                state = opt.state.get(param)
                if state:
                    tensors[f"opt_{prefix}.{pname}.exp_avg"] = state["exp_avg"]
                    tensors[f"opt_{prefix}.{pname}.exp_avg_sq"] = state["exp_avg_sq"]
                    scalars["adam_steps"][f"{prefix}.{pname}"] = float(state["step"])
        tensors["rng"] = torch.get_rng_state()
        configs = {
            "train_config": config_to_dict(self.cfg),
            "generator": dataclasses.asdict(self.gen_cfg),
            "d_struct": dataclasses.asdict(self.ds_cfg) if self.ds_cfg else None,
            "d_plain": dataclasses.asdict(self.dp_cfg) if self.dp_cfg else None,
        }
        save_checkpoint(path, configs, tensors, scalars)

    @classmethod
    def load(cls, path) -> "TrainState":
        configs, tensors, scalars = load_checkpoint(path)
        cfg = config_from_dict(configs["train_config"])
        state = cls(cfg)
        for prefix, net, opt in state._networks():
            for pname, param in net.named_parameters():
                param.data.copy_(tensors[f"{prefix}.{pname}"])
                avg_key = f"opt_{prefix}.{pname}.exp_avg"
                if avg_key in tensors:
                    opt.state[param] = {
                        "step": torch.tensor(scalars["adam_steps"][f"{prefix}.{pname}"]),
                        "exp_avg": tensors[avg_key].clone(),
                        "exp_avg_sq": tensors[f"opt_{prefix}.{pname}.exp_avg_sq"].clone(),
                    }
        torch.set_rng_state(tensors["rng"].to(torch.uint8))
        state.step = int(scalars["step"])
        return state


def config_to_dict(cfg: TrainConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["weights"] = dataclasses.asdict(cfg.weights)
    return out


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d.get("weights", {}))
    return TrainConfig(**d)


def _set_requires_grad(net, flag: bool):
    if net is not None:
        for p in net.parameters():
            p.requires_grad_(flag)


def train_step(state: TrainState, batch, cfg: TrainConfig | None = None):
    """One alternating optimization step; returns (state, LossReport).

    Raises :class:`NumericError` with the partial report attached if any term
    goes non-finite.
    """
    cfg = state.cfg if cfg is None else cfg
    w = cfg.weights
    g = state.generator
    structure = lambda s: s if cfg.structure_input else None

    def gen(img, struct):
        return g(img, structure(struct))

    x, c_x, y, c_y = batch.x, batch.c_x, batch.y, batch.c_y

    # Generator phase: discriminators fixed.
    _set_requires_grad(state.d_struct, False)
    _set_requires_grad(state.d_plain, False)
    y_fake = gen(x, c_y)
    x_fake = gen(y, c_x) if cfg.two_directions else None

    adv_g, _ = losses.adversarial_terms(state.d_struct, state.d_plain, x, c_x, y, c_y, x_fake, y_fake)
    parts = {"adv_g": adv_g}
    if w.lambda_color > 0 and cfg.color_target is not None:
        if cfg.color_target == "y":
            parts["color"] = losses.color_loss(y_fake, y, norm=w.color_norm)
        else:
            if x_fake is None:
                raise ValidationError("color loss on x' requires the two-direction setting")
            parts["color"] = losses.color_loss(x_fake, x, norm=w.color_norm)
    if w.plus_plain_l1:
        parts["l1"] = losses.pixel_loss(y_fake, y, norm=cfg.plain_pixel_norm)
    if w.lambda_cyc > 0:
        cyc = (x - gen(y_fake, c_x)).abs().mean()
        if x_fake is not None:
            cyc = cyc + (y - gen(x_fake, c_y)).abs().mean()
        parts["cyc"] = cyc
    if w.lambda_con > 0:
        parts["con"] = losses.self_content_loss(gen, x, c_x, y, c_y)
    if w.lambda_vgg > 0:
        parts["vgg"] = losses.perceptual_loss(
            state.extractor, cfg.perceptual_layer, y, y_fake,
            x if x_fake is not None else None, x_fake,
        )
    if w.lambda_tv > 0:
        tv = losses.tv_loss(y_fake)
        if x_fake is not None:
            tv = tv + losses.tv_loss(x_fake)
        parts["tv"] = tv

    try:
        report = total_objective(w, **parts)
    except NumericError as exc:
        exc.report = LossReport(**{k: float(v.item()) for k, v in parts.items() if torch.is_tensor(v)})
        raise
    state.opt_g.zero_grad(set_to_none=True)
    report.total_g.backward()
    state.opt_g.step()

    # Discriminator phase: generator fixed (fakes detached).
    _set_requires_grad(state.d_struct, True)
    _set_requires_grad(state.d_plain, True)
    _, adv_d = losses.adversarial_terms(
        state.d_struct, state.d_plain, x, c_x, y, c_y,
        None if x_fake is None else x_fake.detach(), y_fake.detach(),
    )
    if not torch.isfinite(adv_d):
        raise NumericError("discriminator loss is non-finite", report=report)
    for opt in (state.opt_ds, state.opt_dp):
        if opt is not None:
            opt.zero_grad(set_to_none=True)
    adv_d.backward()
    for opt in (state.opt_ds, state.opt_dp):
        if opt is not None:
            opt.step()

    report.adv_d = adv_d.detach()
    report.total_d = adv_d.detach()
    state.step += 1
    return state, report


LOG_COLUMNS = ("step",) + LossReport.FIELDS


def train(samples, cfg: TrainConfig, out_dir) -> Path:
    """Run the full loop over a dataset; writes checkpoints and a CSV log.

    Returns the path of the final checkpoint. The log has one row per step
    with every LossReport field.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = TrainState(cfg)
    cfg = state.cfg
    log_path = out_dir / "training_log.csv"
    ckpt_path = out_dir / "checkpoint.ckpt"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for epoch in range(cfg.epochs):
            for batch in iter_batches(samples, cfg.batch_size, cfg.seed, epoch, augment=cfg.augment):
                state, report = train_step(state, batch)
                row = {"step": state.step}
                row.update(report.to_floats())
                writer.writerow(row)
                if cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
                    state.save(ckpt_path)
    state.save(ckpt_path)
    return ckpt_path


def translate(checkpoint_path, image, structures):
    """Generate one output per structure map from a trained checkpoint.

    ``structures`` may be a single tensor or a list; returns a list of image
    tensors in input order.
    """
    state = TrainState.load(checkpoint_path)
    single = torch.is_tensor(structures) or hasattr(structures, "values")
    structs = [structures] if single else list(structures)
    image = tensor_of(image)
    outputs = []
    with torch.no_grad():
        for struct in structs:
            struct = tensor_of(struct)
            outputs.append(state.generator(image, struct if state.cfg.structure_input else None))
    return outputs
