"""Flat key=value run configuration shared by every CLI command.

One file describes model geometry, alignment settings, losses, optimizer,
and the synthetic data task.  Unknown keys are rejected so typos cannot
silently fall back to defaults, and the resolved config is embedded in
every results file for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from . import align, data, model, objective

# Test-split datasets derive their stream seed from the train seed with
# this offset so the two sample sets never share generator keys.
TEST_SEED_OFFSET = 1_000_003


class UnknownKey(ValueError):
    """Config file contains a key that is not a RunConfig field."""


class BadValue(ValueError):
    """Config value failed to parse or validate."""


@dataclass
class RunConfig:
    # model geometry
    frames: int = 4
    height: int = 32
    width: int = 32
    patch: int = 8
    dim: int = 64
    blocks: int = 4
    heads: int = 4
    dtype: str = "float32"
    # alignment
    aligned_blocks: str = "1-4"
    strategy: str = "adjacent"
    mi_variant: str = "pool_concat"
    conv_depth: str = "standard"
    conv_channels: int = 16
    eta: float = 1.0
    delta: float = 0.3
    beta: float = 1.0
    # scoring and losses
    loss_mode: str = "cosine"
    tau: float = 0.07
    gamma: float = 0.1
    gamma_delay_steps: int = 800
    gamma_ramp_steps: int = 800
    label_smoothing: float = 0.1
    # optimizer
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_steps: int = 100
    steps: int = 2000
    min_lr_ratio: float = 0.01
    batch_size: int = 32
    # synthetic task
    shape_px: int = 7
    speed: int = 4
    noise: float = 0.05
    train_samples: int = 2048
    test_samples: int = 512
    data_seed: int = 0
    # run
    seed: int = 0

    # -- parsing

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        """Read `key = value` lines; '#' starts a comment; unknown keys fail."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise BadValue(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise UnknownKey(f"line {lineno}: unknown config key {key!r}")
            if key in kwargs:
                raise BadValue(f"line {lineno}: duplicate key {key!r}")
            caster = {"int": int, "float": float, "str": str}[types[key]]
            try:
                kwargs[key] = caster(value)
            except ValueError:
                raise BadValue(f"line {lineno}: cannot read {key}={value!r} as {types[key]}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.parse(f.read())

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # -- derived configs

    def aligned_block_tuple(self) -> tuple[int, ...]:
        return parse_blocks(self.aligned_blocks, self.blocks)

    def model_config(self) -> model.ModelConfig:
        try:
            strategy = align.Strategy(self.strategy)
            variant = align.MiVariant(self.mi_variant)
        except ValueError as e:
            raise BadValue(str(e)) from None
        cfg = model.ModelConfig(
            frames=self.frames, height=self.height, width=self.width,
            patch=self.patch, dim=self.dim, blocks=self.blocks, heads=self.heads,
            aligned_blocks=self.aligned_block_tuple(),
            align=align.AlignConfig(
                strategy=strategy, variant=variant, conv_depth=self.conv_depth,
                conv_channels=self.conv_channels, eta=self.eta, delta=self.delta,
                beta=self.beta),
            num_classes=data.N_CLASSES, loss_mode=self.loss_mode, tau=self.tau,
            dtype=self.dtype)
        cfg.validate()
        return cfg

    def optimizer_config(self) -> objective.OptimizerConfig:
        return objective.OptimizerConfig(
            lr=self.lr, weight_decay=self.weight_decay,
            warmup_steps=self.warmup_steps, total_steps=self.steps,
            min_lr_ratio=self.min_lr_ratio)

    def task_spec(self, split: str = "train") -> data.SynthTaskSpec:
        if split not in ("train", "test"):
            raise BadValue(f"split must be train or test, got {split!r}")
        seed = self.data_seed if split == "train" else self.data_seed + TEST_SEED_OFFSET
        return data.SynthTaskSpec(
            frames=self.frames, height=self.height, width=self.width,
            shape_px=self.shape_px, speed=self.speed, noise=self.noise, seed=seed)

    def split_samples(self, split: str) -> int:
        return self.train_samples if split == "train" else self.test_samples

    def validate(self) -> None:
        if self.batch_size < 1 or self.steps < 1:
            raise BadValue("batch_size and steps must be positive")
        if self.train_samples < 1 or self.test_samples < 1:
            raise BadValue("sample counts must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise BadValue("label_smoothing must be in [0, 1)")
        if self.lr <= 0:
            raise BadValue("lr must be positive")
        if self.gamma < 0:
            raise BadValue("gamma must be non-negative")
        if self.gamma_delay_steps < 0 or self.gamma_ramp_steps < 0:
            raise BadValue("gamma schedule steps must be non-negative")
        self.model_config()
        self.task_spec("train").validate()


def parse_blocks(text: str, n_blocks: int) -> tuple[int, ...]:
    """Block-set syntax: 'none', '2', '1,3', '1-4', or mixes like '1,3-4'."""
    text = text.strip().lower()
    if text in ("none", ""):
        return ()
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if lo > hi:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise BadValue(f"cannot parse block set {text!r}") from None
    if len(set(out)) != len(out):
        raise BadValue(f"duplicate blocks in {text!r}")
    bad = [b for b in out if not 1 <= b <= n_blocks]
    if bad:
        raise BadValue(f"blocks {bad} outside 1..{n_blocks}")
    return tuple(sorted(out))
