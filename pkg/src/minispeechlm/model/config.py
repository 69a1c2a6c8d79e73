from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields


class Interleave(str, enum.Enum):
    PARALLEL = "parallel"
    DELAY = "delay"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_q: int = 1
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    max_T: int = 128
    interleave: Interleave = Interleave.PARALLEL
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "interleave", Interleave(self.interleave))
        for name in ("vocab_size", "n_q", "d_model", "n_layers", "n_heads", "ff_mult", "max_T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def delay(self) -> bool:
        return self.interleave is Interleave.DELAY

    def to_json(self) -> dict:
        out = asdict(self)
        out["interleave"] = self.interleave.value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)
