"""Abstract resource accounting: invocation counters instead of wall-clock."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass
class ResourceCounters:
    """Counts of the expensive calls a distillation run performs."""

    teacher_nfe: int = 0
    cond_embeds: int = 0
    data_encoder_calls: int = 0
    optimizer_samples: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def merge(self, other: "ResourceCounters") -> None:
        self.teacher_nfe += other.teacher_nfe
        self.cond_embeds += other.cond_embeds
        self.data_encoder_calls += other.data_encoder_calls
        self.optimizer_samples += other.optimizer_samples
