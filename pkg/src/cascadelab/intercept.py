"""Eve's active phase: partial intercept-resend planning and Eve-side sifting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bb84 import ROW_INTERCEPT, ExchangeRecord, QberEstimate, SessionConfig, SiftedKeys, session_draws


@dataclass(frozen=True)
class InterceptPlan:
    mask: np.ndarray
    rho: float

    @property
    def density(self) -> float:
        return float(np.mean(self.mask)) if len(self.mask) else 0.0


@dataclass(frozen=True)
class EveKnowledge:
    """Bits Eve is certain of, keyed by bit ID of the current key space.

    ``suspect_positions`` are intercepted positions where Eve's basis differed
    from Alice's: Bob may hold an error there, but Eve learns nothing about
    Alice's bit, so they are metadata only.
    """

    known_bits: dict[int, int] = field(default_factory=dict)
    suspect_positions: tuple[int, ...] = ()

    def __post_init__(self):
        if set(self.known_bits) & set(self.suspect_positions):
            raise ValueError("known and suspect positions overlap")

    def fraction(self, n: int) -> float:
        return len(self.known_bits) / n if n else 0.0


def plan_interception(cfg: SessionConfig) -> InterceptPlan:
    """Intercept each raw position independently with probability ``cfg.rho``."""
    mask = session_draws(cfg.seed, cfg.raw_len)[ROW_INTERCEPT] < cfg.rho
    return InterceptPlan(mask=mask, rho=cfg.rho)


def eve_sift(record: ExchangeRecord, sifted: SiftedKeys) -> EveKnowledge:
    if not record.completed:
        raise ValueError("record has not been transmitted")
    kept = sifted.kept_positions
    intercepted = record.eve_intercepted[kept]
    agree = record.eve_bases[kept] == record.alice_bases[kept]
    known = np.flatnonzero(intercepted & agree)
    suspect = np.flatnonzero(intercepted & ~agree)
    values = record.eve_bits[kept]
    return EveKnowledge(
        known_bits={int(i): int(values[i]) for i in known},
        suspect_positions=tuple(int(i) for i in suspect),
    )


def project_knowledge(knowledge: EveKnowledge, estimate: QberEstimate) -> EveKnowledge:
    """Drop bits consumed by QBER sampling and renumber into the reconciled key's IDs."""
    new_id = {int(old): new for new, old in enumerate(estimate.remaining_positions)}
    return EveKnowledge(
        known_bits={new_id[i]: v for i, v in knowledge.known_bits.items() if i in new_id},
        suspect_positions=tuple(new_id[i] for i in knowledge.suspect_positions if i in new_id),
    )
