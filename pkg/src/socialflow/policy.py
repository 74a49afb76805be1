"""Lower-level control policies and the neural forward pass.

Two families share one call surface: scripted path-followers that wrap
the car-following model, and weight-driven neural policies built from
per-polyline DeepSets encoders, single-query multi-head attention with
the observer's own polyline as the query, and a small decoder MLP.
Inference is deterministic and runs in float64; stochastic heads are a
training concern and never enter the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .dynamics import Action
from .idm import find_leader, idm_acceleration, pure_pursuit_steer
from .observation import ObservationFrame
from .weights import OUTPUT_ACTION, OUTPUT_SVO, WeightBundle


class RoleMismatch(ValueError):
    """Policy kind and observation vector length disagree."""


class ShapeMismatch(ValueError):
    """Observation vectors do not fit the encoder input width."""


@dataclass(frozen=True)
class PolicyHandle:
    """One policy serving any number of agents; build via factories.

    ``parameter_shared`` records that a single weight set (or script)
    acts for every agent bound to this handle.
    """

    kind: str
    bundle: Optional[WeightBundle] = None
    action: Optional[Action] = None
    parameter_shared: bool = True

    @classmethod
    def idm_scripted(cls) -> "PolicyHandle":
        return cls("idm_scripted")

    @classmethod
    def neural_lower(cls, bundle: WeightBundle) -> "PolicyHandle":
        if bundle.v_dim != 6 or bundle.output_kind != OUTPUT_ACTION:
            raise RoleMismatch(
                "lower-level control needs a 6-wide action bundle, got "
                f"V={bundle.v_dim} output_kind={bundle.output_kind}"
            )
        return cls("neural_lower", bundle=bundle)

    @classmethod
    def neural_adversary(cls, bundle: WeightBundle) -> "PolicyHandle":
        if bundle.v_dim != 5 or bundle.output_kind != OUTPUT_SVO:
            raise RoleMismatch(
                "adversary needs a 5-wide svo bundle, got "
                f"V={bundle.v_dim} output_kind={bundle.output_kind}"
            )
        return cls("neural_adversary", bundle=bundle)

    @classmethod
    def constant_action(cls, action: Action) -> "PolicyHandle":
        return cls("constant_action", action=action)


@dataclass(frozen=True)
class AdversarySource:
    """Picklable mistaken-context source wrapping an adversary policy."""

    handle: PolicyHandle

    def __post_init__(self):
        if self.handle.kind != "neural_adversary":
            raise RoleMismatch("mistaken source needs a neural_adversary handle")

    def __call__(self, obs: ObservationFrame) -> float:
        return act(self.handle, obs)


def _mlp_rows(rows: np.ndarray, layers: List[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Rows through linear+ReLU layers; weights are (out, in)."""
    h = rows.astype(np.float64)
    for w, b in layers:
        h = h @ w.T.astype(np.float64) + b.astype(np.float64)
        np.maximum(h, 0.0, out=h)
    return h


def _polyline_features(
    dyn: List[np.ndarray], static: List[np.ndarray], w: WeightBundle
) -> np.ndarray:
    """DeepSets feature per polyline, dynamic entries first."""
    t = w.tensors
    dyn_layers = [
        (t["dyn_vector_mlp.0.w"], t["dyn_vector_mlp.0.b"]),
        (t["dyn_vector_mlp.1.w"], t["dyn_vector_mlp.1.b"]),
    ]
    dyn_post = (t["dyn_post_mlp.0.w"], t["dyn_post_mlp.0.b"])
    st_layers = [
        (t["static_vector_mlp.0.w"], t["static_vector_mlp.0.b"]),
        (t["static_vector_mlp.1.w"], t["static_vector_mlp.1.b"]),
    ]
    st_post = (t["static_post_mlp.0.w"], t["static_post_mlp.0.b"])

    feats = []
    for rows in dyn:
        if rows.ndim != 2 or rows.shape[1] != w.v_dim:
            raise ShapeMismatch(
                f"dynamic vectors are {rows.shape[-1]}-wide, encoder wants {w.v_dim}"
            )
        pooled = _mlp_rows(rows, dyn_layers).sum(axis=0)
        feats.append(_mlp_rows(pooled[None, :], [dyn_post])[0])
    for rows in static:
        if rows.ndim != 2 or rows.shape[1] != st_layers[0][0].shape[1]:
            raise ShapeMismatch(
                f"static vectors are {rows.shape[-1]}-wide, encoder wants "
                f"{st_layers[0][0].shape[1]}"
            )
        pooled = _mlp_rows(rows, st_layers).sum(axis=0)
        feats.append(_mlp_rows(pooled[None, :], [st_post])[0])
    return np.stack(feats, axis=0)


def _attend(feats: np.ndarray, query_index: int, w: WeightBundle) -> np.ndarray:
    """Single-query multi-head attention over the polyline features."""
    t = w.tensors
    d = w.feature_dim
    hd = d // w.n_heads
    q = t["mha.w_q"].astype(np.float64) @ feats[query_index] + t["mha.b_q"].astype(np.float64)
    k = feats @ t["mha.w_k"].T.astype(np.float64) + t["mha.b_k"].astype(np.float64)
    v = feats @ t["mha.w_v"].T.astype(np.float64) + t["mha.b_v"].astype(np.float64)
    heads = []
    scale = 1.0 / math.sqrt(hd)
    for h in range(w.n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        scores = k[:, sl] @ q[sl] * scale
        scores -= scores.max()
        weights = np.exp(scores)
        weights /= weights.sum()
        heads.append(weights @ v[:, sl])
    out = np.concatenate(heads)
    return t["mha.w_o"].astype(np.float64) @ out + t["mha.b_o"].astype(np.float64)


def encode_observation(obs: ObservationFrame, w: WeightBundle) -> np.ndarray:
    """Attended feature vector (D,) for the observing agent.

    Each polyline becomes one feature by summing its vectors through a
    shared MLP; the observer's own feature queries all features.
    """
    dyn, static = obs.to_arrays()
    feats = _polyline_features(dyn, static, w)
    return _attend(feats, obs.self_index, w)


def _decode(feat: np.ndarray, w: WeightBundle) -> np.ndarray:
    t = w.tensors
    h = feat
    for i in range(3):
        h = t[f"decoder_mlp.{i}.w"].astype(np.float64) @ h + t[f"decoder_mlp.{i}.b"].astype(np.float64)
        if i < 2:
            np.maximum(h, 0.0, out=h)
    return h


def _squash_action(y: np.ndarray, w: WeightBundle) -> Action:
    v_ref = 0.5 * (math.tanh(float(y[0])) + 1.0) * w.bound_a
    sigma = math.tanh(float(y[1])) * w.bound_b
    return Action(v_ref, sigma)


def _squash_svo(y: np.ndarray, w: WeightBundle) -> float:
    return w.bound_a + 0.5 * (math.tanh(float(y[0])) + 1.0) * (w.bound_b - w.bound_a)


def scripted_action(world, agent_id: int) -> Action:
    """Canonical scripted driver: car-following speed, pursuit steering."""
    a = world.agents[agent_id]
    p = world.scenario.idm
    lead = find_leader(world, agent_id)
    if lead is None:
        accel = idm_acceleration(a.speed, a.speed, math.inf, p)
    else:
        accel = idm_acceleration(a.speed, lead.speed, lead.gap, p)
    v_ref = min(max(a.speed + accel * world.episode_config.dt, 0.0), a.params.v_max)
    sigma = pure_pursuit_steer(
        a.x, a.y, a.theta, a.path.arrays, a.proj_s, a.params.wheelbase, a.params.sigma_max
    )
    return Action(v_ref, sigma)


def act(
    policy: PolicyHandle, obs: Optional[ObservationFrame], world=None
) -> Union[Action, float]:
    """Evaluate ``policy``: an Action, or degrees for the adversary kind.

    Pure in (weights, observation) for the neural kinds; the scripted
    kind reads the world instead and needs ``obs`` only to name the
    acting agent.
    """
    if policy.kind == "constant_action":
        return policy.action
    if policy.kind == "idm_scripted":
        if world is None:
            raise ValueError("scripted policy needs the world")
        return scripted_action(world, obs.agent_ids[obs.self_index])
    b = policy.bundle
    head = obs.agent_polylines[obs.self_index].vectors[0]
    got = 5 if head.svo is None else 6
    if got != b.v_dim:
        raise RoleMismatch(
            f"{policy.kind} wants {b.v_dim}-wide vectors, observation has {got}"
        )
    y = _decode(encode_observation(obs, b), b)
    if policy.kind == "neural_lower":
        return _squash_action(y, b)
    if policy.kind == "neural_adversary":
        return _squash_svo(y, b)
    raise ValueError(f"unknown policy kind {policy.kind!r}")
