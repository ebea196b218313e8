"""Network hyperparameters and the derived layer widths."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch


@dataclass(frozen=True)
class ModelConfig:
    """Widths and flags for the handling-process network.

    The defaults reproduce the reference configuration: 36-feature gesture
    input (6 segments x 6), 6-D operation output, 32-D latent, hidden state
    128 and per-segment feature width 32. All stacks are derived from
    (hidden, feat, latent_dim) so reduced test configurations stay
    proportioned.
    """

    segment_dim: int = 6
    n_segments: int = 6
    op_dim: int = 6
    latent_dim: int = 32
    hidden: int = 128
    feat: int = 32
    dtype: str = "float32"
    share_decoder_cell: bool = False
    zero_prev_op: bool = False
    # predict the operation mean as the attention readout plus a learned
    # correction; keeps the attention pathway load-bearing from step one
    attention_residual: bool = True

    def __post_init__(self):
        if self.hidden % 2:
            raise ValueError("hidden width must be even")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def gesture_dim(self) -> int:
        return self.n_segments * self.segment_dim

    # -- derived MLP stacks (first entry input width, last output width) --

    @property
    def finger_layers(self) -> list[int]:
        return [self.segment_dim, self.feat, self.feat]

    @property
    def hand_layers(self) -> list[int]:
        return [self.n_segments * self.feat + self.hidden,
                self.hidden, self.hidden // 2, self.feat]

    @property
    def cell_input(self) -> int:
        return self.feat + self.op_dim

    @property
    def agg_layers(self) -> list[int]:
        return [self.hidden + self.op_dim] + [self.hidden] * 4

    @property
    def latent_trunk_layers(self) -> list[int]:
        return [self.hidden] * 5

    @property
    def kq_layers(self) -> list[int]:
        return [self.hidden, self.feat]

    @property
    def head_layers(self) -> list[int]:
        # one (mean, variance) head per motion dimension
        return [self.op_dim + self.hidden + self.latent_dim,
                self.hidden, self.hidden // 2, 2]

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    @classmethod
    def reduced(cls, hidden: int = 8, feat: int = 8, latent_dim: int = 4,
                dtype: str = "float64", **kw) -> "ModelConfig":
        """Small configuration for gradient checks and fast tests."""
        return cls(hidden=hidden, feat=feat, latent_dim=latent_dim,
                   dtype=dtype, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)
