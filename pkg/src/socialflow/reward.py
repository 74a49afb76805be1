"""Per-step rewards and their social composition.

Each agent earns an individual reward mixing normalized speed with a
terminal failure penalty, then blends it with the mean reward of the
other agents through its social value orientation angle.  An angle of
0 degrees is perfectly egoistic, 90 degrees perfectly prosocial, and
negative angles (used by adversarial background flows) trade own gain
for others' loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

# Delivered-context entry meaning "this agent's angle is not visible".
SVO_SENTINEL = -1.0

FLOW_SVO_RANGE = (0.0, 90.0)
ADVERSARY_SVO_RANGE = (-90.0, 0.0)


class ContextOutOfRange(ValueError):
    pass


class EmptyOthers(ValueError):
    """Social composition needs at least one other agent."""


@dataclass(frozen=True)
class RewardWeights:
    """Mixing weights; the failure term dominates by design.

    One terminal failure must outweigh anything the speed term can
    accumulate, so omega2 is required to be at least ten times omega1.
    """

    omega1: float = 1.0
    omega2: float = 100.0

    def __post_init__(self):
        if self.omega2 < 10.0 * self.omega1:
            raise ValueError(
                f"omega2 ({self.omega2}) must be at least 10x omega1 ({self.omega1})"
            )


@dataclass(frozen=True)
class RewardBreakdown:
    """All reward components of one agent for one step."""

    r_speed: float
    r_fail: float
    individual: float
    composed: float
    adversary_signal: Optional[float] = None


@dataclass(frozen=True)
class SvoContext:
    """Genuine per-agent social value orientation angles, degrees.

    Constant over an episode.  Flow agents lie in [0, 90]; adversarial
    background agents in [-90, 0).
    """

    angles: Dict[int, float]

    def validate_flow(self):
        for aid, ang in self.angles.items():
            lo, hi = FLOW_SVO_RANGE
            if not (lo <= ang <= hi):
                raise ContextOutOfRange(
                    f"agent {aid}: flow svo {ang} outside [{lo}, {hi}] degrees"
                )


def cos_sin_deg(deg: float):
    """Cosine and sine of an angle in degrees, exact at axis multiples.

    Plain radian conversion leaves cos(90 deg) at ~6e-17, which breaks
    the algebraic endpoints of the social composition; right-angle
    multiples are therefore special-cased to exact values.
    """
    r = math.fmod(deg, 360.0)
    if r < 0.0:
        r += 360.0
    if r == 0.0:
        return 1.0, 0.0
    if r == 90.0:
        return 0.0, 1.0
    if r == 180.0:
        return -1.0, 0.0
    if r == 270.0:
        return 0.0, -1.0
    rad = math.radians(deg)
    return math.cos(rad), math.sin(rad)


def speed_reward(speed: float, v_max: float) -> float:
    """Normalized speed term in [-1, 1]: -1 standing, +1 at v_max."""
    return 2.0 * speed / v_max - 1.0


def individual_reward(
    speed: float,
    v_max: float,
    failed: bool,
    weights: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    """Individual reward for one agent step.

    ``failed`` is true only on the step that terminates the agent with a
    collision, off-road, off-route, or wrong-lane status; the penalty
    lands exactly once.  The composed field starts equal to the
    individual value and is replaced by the social composition once the
    other agents' rewards are known.
    """
    r_speed = speed_reward(speed, v_max)
    r_fail = -1.0 if failed else 0.0
    total = weights.omega1 * r_speed + weights.omega2 * r_fail
    return RewardBreakdown(r_speed, r_fail, total, total)


def socially_composed_reward(
    own: float,
    others: Sequence[float],
    svo_deg: float,
) -> float:
    """Blend own reward with the mean of the others through the angle.

    cos(c) * own + sin(c) * mean(others); c = 0 returns own exactly and
    c = 90 returns the mean exactly.  Raises EmptyOthers when there are
    no other agents, the caller decides the single-agent fallback.
    """
    if len(others) == 0:
        raise EmptyOthers("no other agents to compose with")
    c, s = cos_sin_deg(svo_deg)
    mean_others = math.fsum(others) / len(others)
    if c == 1.0 and s == 0.0:
        return own
    if c == 0.0 and s == 1.0:
        return mean_others
    return c * own + s * mean_others


def adversary_reward(ego_individual: float) -> float:
    """Zero-sum signal for the adversary: exact negation of the ego's."""
    return -ego_individual


def alpha_to_svo(alpha: float) -> float:
    """Map a selfishness ratio alpha >= 0 to an adversarial angle.

    The ratio weighs own reward against the ego's in the underlying
    adversarial objective; the equivalent angle is -atan(1/alpha) in
    degrees.  alpha = 1 gives exactly -45, alpha = 0 the limit -90, and
    the map is strictly increasing with range [-90, 0).
    """
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if alpha == 0.0:
        return -90.0
    return -math.degrees(math.atan(1.0 / alpha))


def failmaker_individual_reward(
    individual: float,
    collided: bool,
    weights: RewardWeights = RewardWeights(),
) -> float:
    """Individual reward with the collision penalty refunded.

    Background agents trained to cause failures must not be discouraged
    from colliding, so the failure weight is added back on the step
    where a collision terminated the agent.
    """
    if collided:
        return individual + weights.omega2
    return individual


def failmaker_background_reward(own: float, ego: float, c_deg: float) -> float:
    """Attacker composition: cos(c) * own + sin(c) * ego, c in [-90, 0).

    ``own`` is the attacker's collision-refunded individual reward and
    ``ego`` the ego agent's individual reward; a negative angle trades
    self-interest against harm to the ego.  c = -90 returns -ego exactly.
    """
    lo, hi = ADVERSARY_SVO_RANGE
    if not (lo <= c_deg < hi):
        raise ContextOutOfRange(
            f"attacker svo {c_deg} outside [{lo}, {hi}) degrees"
        )
    c, s = cos_sin_deg(c_deg)
    if c == 0.0 and s == -1.0:
        return -ego
    return c * own + s * ego
