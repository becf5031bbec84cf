"""Differentiable encoders and heads.

A small stride-2 conv stack serves as the shared trunk for sound (2-channel
spectrograms), panorama frames, and motion-flow grids. The pooled embedding
is defined as the spatial mean of the dense feature map, so the two outputs
are always consistent. GroupNorm keeps every module stateless: forward
passes depend only on parameters and inputs, which the reproducibility and
identity tests below rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

ENCODER_KINDS = ("sound", "visual", "flow")
HEAD_KINDS = (
    "rotation_classifier",
    "gap_regressor",
    "projection",
    "dense_projection",
    "semantic_decoder",
    "s3r_decoder",
)


class EncoderError(ValueError):
    """Raised for invalid encoder/head configurations or mismatched inputs."""


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "sound"
    in_channels: int = 2
    channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel: int = 3
    embed_dim: int = 128
    emit_dense: bool = True
    norm_groups: int = 4

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise EncoderError(f"unknown encoder kind {self.kind!r}")
        if len(self.channels) < 2:
            raise EncoderError("need at least 2 conv stages")
        if self.embed_dim < 8:
            raise EncoderError("embed_dim must be >= 8")
        if self.channels[-1] != self.embed_dim:
            raise EncoderError("last conv stage width must equal embed_dim")
        if self.kernel % 2 != 1:
            raise EncoderError("kernel must be odd")


class ConvStage(nn.Module):
    """One stride-2 conv + GroupNorm + ReLU, with an optional lateral branch.

    The lateral branch is a bias-free conv over features coming from frozen
    sibling columns; with all-zero lateral input the stage is exactly
    equivalent to a stage without the branch.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, groups: int, lateral_in: int = 0):
        super().__init__()
        pad = kernel // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=2, padding=pad)
        self.lat = (
            nn.Conv2d(lateral_in, out_ch, kernel, stride=2, padding=pad, bias=False)
            if lateral_in > 0
            else None
        )
        self.norm = nn.GroupNorm(min(groups, out_ch), out_ch)
        self.act = nn.ReLU()

    def forward(self, x: Tensor, lateral: Tensor | None = None) -> Tensor:
        h = self.conv(x)
        if self.lat is not None and lateral is not None:
            h = h + self.lat(lateral)
        return self.act(self.norm(h))


class ConvTrunk(nn.Module):
    """Stack of stride-2 ConvStages; returns (pooled d-vector, dense d-map).

    lateral_widths[s] gives the extra channel count fed to stage s from
    sibling columns (progressive-column training); stage 0 never takes
    laterals because all columns share the raw input.
    """

    def __init__(self, config: EncoderConfig, lateral_widths: tuple[int, ...] | None = None):
        super().__init__()
        if lateral_widths is not None and len(lateral_widths) != len(config.channels):
            raise EncoderError("lateral_widths must cover every stage")
        self.config = config
        widths = [config.in_channels, *config.channels]
        self.lateral_widths = tuple(lateral_widths) if lateral_widths else tuple(
            0 for _ in config.channels
        )
        if self.lateral_widths[0] != 0:
            raise EncoderError("stage 0 cannot take lateral input")
        self.stages = nn.ModuleList(
            ConvStage(
                widths[s],
                widths[s + 1],
                config.kernel,
                config.norm_groups,
                lateral_in=self.lateral_widths[s],
            )
            for s in range(len(config.channels))
        )

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    @property
    def stage_input_widths(self) -> tuple[int, ...]:
        """Effective input width of each stage: own channels plus laterals."""
        widths = [self.config.in_channels, *self.config.channels[:-1]]
        return tuple(w + l for w, l in zip(widths, self.lateral_widths))

    def forward(
        self,
        x: Tensor,
        laterals: list[Tensor | None] | None = None,
        return_stages: bool = False,
    ):
        if x.ndim != 4:
            raise EncoderError(f"expected 4-D input (N, C, H, W), got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise EncoderError(
                f"input channel mismatch: expected {self.config.in_channels}, got {x.shape[1]}"
            )
        h = x
        stage_outs: list[Tensor] = []
        for s, stage in enumerate(self.stages):
            lat = laterals[s] if laterals is not None else None
            h = stage(h, lat)
            stage_outs.append(h)
        dense = h
        pooled = dense.mean(dim=(-2, -1))
        if return_stages:
            return pooled, dense, stage_outs
        return pooled, dense if self.config.emit_dense else None


@dataclass(frozen=True)
class HeadSpec:
    """Declarative head description; build() instantiates the module."""

    kind: str
    in_dim: int
    out_dim: int = 1
    hidden: int = 128
    # decoder-only shape info
    sem_bins: int = 0
    n_classes: int = 0
    n_frames: int = 0

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise EncoderError(f"unknown head kind {self.kind!r}")
        if self.kind == "gap_regressor" and self.hidden != 64:
            raise EncoderError("gap regressor hidden size is fixed at 64")
        if self.in_dim < 1:
            raise EncoderError("in_dim must be positive")

    def build(self) -> nn.Module:
        if self.kind == "rotation_classifier":
            return RotationHead(self.in_dim, self.out_dim, self.hidden)
        if self.kind == "gap_regressor":
            return GapHead(self.in_dim)
        if self.kind == "projection":
            return ProjectionHead(self.in_dim, self.out_dim)
        if self.kind == "dense_projection":
            return DenseProjectionHead(self.in_dim, self.out_dim)
        if self.kind == "semantic_decoder":
            return SemanticDecoder(self.in_dim, self.n_classes, self.sem_bins, self.n_frames)
        if self.kind == "s3r_decoder":
            return S3RDecoder(self.in_dim, self.out_dim)
        raise EncoderError(self.kind)


class RotationHead(nn.Module):
    """MLP over concatenated (rotated video, audio) embeddings -> bin logits."""

    def __init__(self, in_dim: int, bins: int = 8, hidden: int = 128):
        super().__init__()
        self.bins = bins
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, bins)
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class GapHead(nn.Module):
    """Concatenated pair of sound embeddings -> scalar gap estimate.

    Single hidden layer of size 64 (fixed).
    """

    def __init__(self, in_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, 64), nn.ReLU(), nn.Linear(64, 1))

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x).squeeze(-1)


class ProjectionHead(nn.Module):
    """Two-layer MLP projection for contrastive embeddings."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, in_dim), nn.ReLU(), nn.Linear(in_dim, out_dim)
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class DenseProjectionHead(nn.Module):
    """Per-location projection (1x1 convs) preserving the spatial grid."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_dim, in_dim, 1), nn.ReLU(), nn.Conv2d(in_dim, out_dim, 1)
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class SemanticDecoder(nn.Module):
    """Dense sound features -> per-frame, per-azimuth-bin class logits.

    Three convs over the time axis of the dense map (frequency is averaged
    out) followed by linear time upsampling; no transposed convolutions.
    Output shape: (N, n_classes + 1, n_frames, sem_bins); channel n_classes
    is the "empty bin" class.
    """

    def __init__(self, in_dim: int, n_classes: int, sem_bins: int, n_frames: int):
        super().__init__()
        if min(n_classes, sem_bins, n_frames) < 1:
            raise EncoderError("semantic decoder shape fields must be positive")
        self.n_classes = n_classes
        self.sem_bins = sem_bins
        self.n_frames = n_frames
        out = (n_classes + 1) * sem_bins
        self.net = nn.Sequential(
            nn.Conv1d(in_dim, 128, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(128, 128, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(128, out, 1),
        )

    def forward(self, dense: Tensor) -> Tensor:
        if dense.ndim != 4:
            raise EncoderError("semantic decoder expects a dense (N, d, F', T') map")
        h = dense.mean(dim=2)  # collapse frequency -> (N, d, T')
        h = self.net(h)
        h = torch.nn.functional.interpolate(
            h, size=self.n_frames, mode="linear", align_corners=False
        )
        n = h.shape[0]
        h = h.reshape(n, self.n_classes + 1, self.sem_bins, self.n_frames)
        return h.permute(0, 1, 3, 2)  # (N, C+1, n_frames, sem_bins)


class S3RDecoder(nn.Module):
    """Dense sound features -> log-magnitude spectrograms at unseen rotations.

    Three convs at dense resolution, then bilinear upsampling to the target
    (F, T) grid; out_channels = 2 channels x number of extra rotations.
    """

    def __init__(self, in_dim: int, out_channels: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_dim, 128, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(128, 128, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(128, out_channels, 1),
        )

    def forward(self, dense: Tensor, out_hw: tuple[int, int]) -> Tensor:
        if dense.ndim != 4:
            raise EncoderError("s3r decoder expects a dense (N, d, F', T') map")
        h = self.net(dense)
        return torch.nn.functional.interpolate(
            h, size=out_hw, mode="bilinear", align_corners=False
        )


def seed_init(module: nn.Module, seed: int, param_filter=None) -> None:
    """Deterministic fan-in-scaled uniform init driven by an explicit generator.

    Parameters are visited in sorted-name order so two modules with the same
    parameter names and shapes receive identical values for the same seed,
    regardless of construction order. Norm affine parameters are set to
    (1, 0) and consume no randomness. `param_filter(name) -> bool` restricts
    the pass (used to re-seed lateral branches separately).
    """
    g = torch.Generator().manual_seed(seed)
    params = dict(module.named_parameters())
    with torch.no_grad():
        for name in sorted(params):
            if param_filter is not None and not param_filter(name):
                continue
            p = params[name]
            if p.ndim >= 2:
                fan_in = p.shape[1] * (p[0, 0].numel() if p.ndim > 2 else 1)
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=g)
            elif name.endswith(".bias"):
                weight = params.get(name[: -len(".bias")] + ".weight")
                if weight is not None and weight.ndim >= 2:
                    fan_in = weight.shape[1] * (
                        weight[0, 0].numel() if weight.ndim > 2 else 1
                    )
                    p.uniform_(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), generator=g)
                else:  # norm bias
                    p.zero_()
            else:  # norm weight
                p.fill_(1.0)


def momentum_update(query: nn.Module, key: nn.Module, m: float) -> nn.Module:
    """key <- m * key + (1 - m) * query, elementwise over congruent parameter trees."""
    if not 0.0 <= m <= 1.0:
        raise EncoderError("momentum m must lie in [0, 1]")
    q_params = dict(query.named_parameters())
    k_params = dict(key.named_parameters())
    if q_params.keys() != k_params.keys():
        raise EncoderError("parameter trees are not congruent (names differ)")
    with torch.no_grad():
        for name, q in q_params.items():
            k = k_params[name]
            if k.shape != q.shape:
                raise EncoderError(f"parameter trees are not congruent at {name}")
            if m == 1.0:
                continue
            if m == 0.0:
                k.copy_(q)
            else:
                k.mul_(m).add_(q, alpha=1.0 - m)
    return key


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def zero_grad_check(module: nn.Module) -> bool:
    """True if no parameter of the module carries a gradient."""
    return all(p.grad is None or torch.all(p.grad == 0) for p in module.parameters())
