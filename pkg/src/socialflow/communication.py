"""Per-step delivery of social value orientation context.

Four delivery modes decide what each receiver learns about the other
agents' dispositions: a fixed constant, self-knowledge only, the full
genuine context, or the genuine context with the ego agent's entry
replaced by an attacker's fabrication.  Delivery is pure: the same
inputs always produce the same context, and only the ego entry can ever
diverge from the genuine values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional

from .observation import EGO_ID, ObservationFrame
from .reward import FLOW_SVO_RANGE, SVO_SENTINEL, ContextOutOfRange, SvoContext

MistakenSource = Callable[[ObservationFrame], float]


class MissingAdversaryObservation(ValueError):
    """Adversarial delivery in range needs the attacker's observation."""


class Provenance(Enum):
    GENUINE = "genuine"
    MISTAKEN = "mistaken"
    INVISIBLE = "invisible"
    CONSTANT = "constant"


@dataclass(frozen=True)
class CommMode:
    """Delivery mode; build via the factory classmethods."""

    kind: str
    constant_deg: float = 0.0
    mistaken_source: Optional[MistakenSource] = None

    @classmethod
    def constant(cls, deg: float = 0.0) -> "CommMode":
        lo, hi = FLOW_SVO_RANGE
        if not lo <= deg <= hi:
            raise ContextOutOfRange(
                f"constant context {deg} outside [{lo}, {hi}] degrees"
            )
        return cls("constant", constant_deg=deg)

    @classmethod
    def self_visible(cls) -> "CommMode":
        return cls("self_visible")

    @classmethod
    def fully_visible_genuine(cls) -> "CommMode":
        return cls("fully_visible_genuine")

    @classmethod
    def adversarial(cls, mistaken_source: MistakenSource) -> "CommMode":
        if mistaken_source is None:
            raise ValueError("adversarial mode needs a mistaken source")
        return cls("adversarial", mistaken_source=mistaken_source)


@dataclass(frozen=True)
class DeliveredContext:
    """What one receiver is told, per agent id.

    ``entries`` always covers the same ids as the genuine context;
    agents the mode hides carry the sentinel value and an INVISIBLE
    provenance flag.
    """

    entries: Dict[int, float]
    provenance: Dict[int, Provenance]


def communicate(
    mode: CommMode,
    receiver: int,
    genuine: SvoContext,
    adv_obs: Optional[ObservationFrame] = None,
    ego_distance: float = math.inf,
    clip_radius: float = 30.0,
) -> DeliveredContext:
    """Deliver context to ``receiver`` under ``mode``.

    Constant mode reports the same fixed angle for everyone.
    Self-visible reveals only the receiver's own genuine angle.  Fully
    visible passes the genuine context through unchanged.  Adversarial
    mode passes genuine values for every agent except the ego, whose
    entry is replaced by the mistaken source evaluated on the
    attacker's observation; an ego farther than ``clip_radius`` is out
    of the attacker's reach and keeps its genuine entry.
    """
    angles = genuine.angles
    if mode.kind == "constant":
        return DeliveredContext(
            entries={aid: mode.constant_deg for aid in angles},
            provenance={aid: Provenance.CONSTANT for aid in angles},
        )
    if mode.kind == "self_visible":
        entries = {}
        prov = {}
        for aid, ang in angles.items():
            if aid == receiver:
                entries[aid] = ang
                prov[aid] = Provenance.GENUINE
            else:
                entries[aid] = SVO_SENTINEL
                prov[aid] = Provenance.INVISIBLE
        return DeliveredContext(entries=entries, provenance=prov)
    if mode.kind == "fully_visible_genuine":
        return DeliveredContext(
            entries=dict(angles),
            provenance={aid: Provenance.GENUINE for aid in angles},
        )
    if mode.kind == "adversarial":
        entries = dict(angles)
        prov = {aid: Provenance.GENUINE for aid in angles}
        if EGO_ID in angles and ego_distance <= clip_radius:
            if adv_obs is None:
                raise MissingAdversaryObservation(
                    "ego within reach but no attacker observation given"
                )
            mistaken = float(mode.mistaken_source(adv_obs))
            lo, hi = FLOW_SVO_RANGE
            if not lo <= mistaken <= hi:
                raise ContextOutOfRange(
                    f"mistaken context {mistaken} outside [{lo}, {hi}] degrees"
                )
            entries[EGO_ID] = mistaken
            prov[EGO_ID] = Provenance.MISTAKEN
        return DeliveredContext(entries=entries, provenance=prov)
    raise ValueError(f"unknown communication mode {mode.kind!r}")
