"""Hyperparameter containers with the published defaults."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

# l1 weight selected per SPN crop side (pixels)
GAMMA_BY_SPN_SIZE = {256: 0.0045, 512: 0.0018, 768: 0.0012, 1024: 0.0008}

MAX_BATCH_SIZE = 4000
SINGLE_SOLVE_CAP = 6000


def default_gamma(spn_size: int) -> float:
    """Return the tabulated gamma for a square SPN of side ``spn_size``.

    Raises ``KeyError`` for sizes outside the table; gamma must then be
    supplied explicitly.
    """
    try:
        return GAMMA_BY_SPN_SIZE[spn_size]
    except KeyError:
        raise KeyError(
            f"no default gamma for spn_size={spn_size}; pass gamma explicitly "
            f"(tabulated sizes: {sorted(GAMMA_BY_SPN_SIZE)})"
        ) from None


@dataclass(frozen=True)
class AdmmConfig:
    gamma: float
    eta: float = 1.0
    epsilon: float = 1e-4
    max_iters: int = 1000

    def __post_init__(self):
        if not (self.gamma > 0 and self.eta > 0 and self.epsilon > 0):
            raise ValueError("gamma, eta and epsilon must all be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class LsConfig:
    """Settings for the large-scale (split/partition/recycle/merge) pipeline.

    ``recycle_steps=None`` means floor(B/2) with B the number of batches.
    """

    admm: AdmmConfig
    batch_size: int = MAX_BATCH_SIZE
    knn: int = 5
    recycle_steps: Optional[int] = None
    p_fa: float = 0.001
    inlier_fraction: float = 0.8
    walk_steps: int = 1000
    card_cap: int = 50

    def __post_init__(self):
        if not 2 <= self.batch_size <= MAX_BATCH_SIZE:
            raise ValueError(f"batch_size must lie in [2, {MAX_BATCH_SIZE}]")
        if self.knn < 1:
            raise ValueError("knn must be >= 1")
        if self.recycle_steps is not None and self.recycle_steps < 0:
            raise ValueError("recycle_steps must be >= 0")
        if not 0 < self.p_fa < 1:
            raise ValueError("p_fa must lie in (0, 1)")
        if not 0 < self.inlier_fraction <= 1:
            raise ValueError("inlier_fraction must lie in (0, 1]")
        if self.walk_steps < 1 or self.card_cap < 1:
            raise ValueError("walk_steps and card_cap must be >= 1")

    def num_batches(self, n: int) -> int:
        return max(1, math.ceil(n / self.batch_size))

    def resolved_recycle_steps(self, n: int) -> int:
        if self.recycle_steps is not None:
            return self.recycle_steps
        return self.num_batches(n) // 2


@dataclass
class PipelineConfig:
    """Everything needed to reproduce a clustering run.

    Key names follow the CLI flags; ``gamma=None`` resolves through
    :data:`GAMMA_BY_SPN_SIZE` using ``spn_size``.
    """

    mode: str = "ssc-nc"
    gamma: Optional[float] = None
    eta: float = 1.0
    epsilon: float = 1e-4
    max_iters: int = 1000
    batch_size: int = MAX_BATCH_SIZE
    knn: int = 5
    recycle_steps: Optional[int] = None
    pfa: float = 0.001
    inlier_fraction: float = 0.8
    walk_steps: int = 1000
    card_cap: int = 50
    kappa_max: int = 50
    single_solve_cap: int = SINGLE_SOLVE_CAP
    spn_size: int = 512
    seed: int = 0
    workers: int = 1
    trace: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("ssc-nc", "ls-ssc"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def resolved_gamma(self) -> float:
        return self.gamma if self.gamma is not None else default_gamma(self.spn_size)

    def admm(self) -> AdmmConfig:
        return AdmmConfig(self.resolved_gamma(), self.eta, self.epsilon, self.max_iters)

    def ls(self) -> LsConfig:
        return LsConfig(
            admm=self.admm(),
            batch_size=self.batch_size,
            knn=self.knn,
            recycle_steps=self.recycle_steps,
            p_fa=self.pfa,
            inlier_fraction=self.inlier_fraction,
            walk_steps=self.walk_steps,
            card_cap=self.card_cap,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
