"""Synthetic scenes, pose-noise injection, and the noisy detection oracle.

Everything here is a pure function of its inputs and a seed. Per-agent draws
come from independent substreams derived by hashing (seed, agent id, purpose),
so adding an agent or changing one stream never perturbs the others.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Pose2, compose, inverse
from .posegraph import AgentMessage
from .uncertainty import BoxDetection, box_from_vector

# Reported variances are floored so zero-noise runs still produce valid
# (positive definite) information weights.
VARIANCE_FLOOR = 1e-6

_GAUSSIAN = "gaussian"
_LAPLACE = "laplace"


def derive_seed(*parts) -> int:
    """Stable 64-bit child seed from arbitrary labels (platform independent)."""
    text = "/".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


class ScenarioError(RuntimeError):
    """Raised when a scene cannot be realized, e.g. infeasible object packing."""


@dataclass(frozen=True)
class SceneAgent:
    agent_id: str
    pose: Pose2


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    pose: Pose2
    length: float
    width: float


@dataclass(frozen=True)
class Scene:
    """Ground-truth world: agents, objects, and the per-agent visibility extent.

    extent is the (forward, lateral) half-size of the rectangle, in each
    agent's own frame, inside which objects can be detected.
    """

    agents: tuple[SceneAgent, ...]
    objects: tuple[SceneObject, ...]
    extent: tuple[float, float] = (140.0, 140.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "extent", (float(self.extent[0]), float(self.extent[1])))
        if not self.agents:
            raise ValueError("scene needs at least one agent")
        ids = [a.agent_id for a in self.agents] + [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("agent and object ids must be unique")
        if self.extent[0] <= 0.0 or self.extent[1] <= 0.0:
            raise ValueError("extent must be positive")

    def agent(self, agent_id: str) -> SceneAgent:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise ValueError(f"no agent {agent_id!r} in scene")


@dataclass(frozen=True)
class NoiseSpec:
    """Pose corruption model: translation scale in meters, rotation scale in degrees."""

    kind: str = _GAUSSIAN
    trans_scale: float = 0.0
    rot_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (_GAUSSIAN, _LAPLACE):
            raise ValueError(f"noise kind must be gaussian or laplace, got {self.kind!r}")
        if self.trans_scale < 0.0 or self.rot_scale < 0.0:
            raise ValueError("noise scales must be >= 0")


@dataclass(frozen=True)
class DetectorSpec:
    """Configurable stand-in for a single-agent detector.

    Reported variances are variance_calibration times the true sampling
    variances (floored at VARIANCE_FLOOR); confidence is base_confidence
    minus confidence_decay * distance / detection_range, clamped to [0, 1].
    When noise_scale_choices is set, each box draws a scale factor from it
    uniformly and multiplies both noise standard deviations (heteroscedastic
    detections with honestly reported per-box variances).
    """

    detection_range: float = 150.0
    miss_rate: float = 0.0
    center_noise_sd: float = 0.2
    heading_noise_sd: float = 0.05
    variance_calibration: float = 1.0
    base_confidence: float = 0.9
    confidence_decay: float = 0.2
    noise_scale_choices: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.detection_range <= 0.0:
            raise ValueError("detection_range must be positive")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must be in [0, 1]")
        if self.center_noise_sd < 0.0 or self.heading_noise_sd < 0.0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.variance_calibration <= 0.0:
            raise ValueError("variance_calibration must be positive")
        if not 0.0 <= self.base_confidence <= 1.0:
            raise ValueError("base_confidence must be in [0, 1]")
        if self.confidence_decay < 0.0:
            raise ValueError("confidence_decay must be >= 0")
        if self.noise_scale_choices is not None:
            choices = tuple(float(c) for c in self.noise_scale_choices)
            if not choices or any(c <= 0.0 for c in choices):
                raise ValueError("noise_scale_choices must be positive")
            object.__setattr__(self, "noise_scale_choices", choices)


def generate_scene(
    num_agents: int,
    num_objects: int,
    area: tuple[float, float] = (100.0, 100.0),
    seed: int = 0,
    extent: tuple[float, float] = (140.0, 140.0),
    min_object_gap: float = 5.0,
) -> Scene:
    """Deterministically place agents and non-overlapping objects in a rectangle.

    Objects keep pairwise center distance >= min_object_gap; placement is
    rejection-sampled and raises ScenarioError when the packing is infeasible.
    """
    if num_agents < 1:
        raise ValueError("need at least one agent")
    if num_objects < 0:
        raise ValueError("num_objects must be >= 0")
    if area[0] <= 0.0 or area[1] <= 0.0:
        raise ValueError("area must be positive")
    rng = np.random.default_rng(derive_seed(seed, "scene-gen"))
    hx, hy = 0.5 * float(area[0]), 0.5 * float(area[1])

    agents = tuple(
        SceneAgent(
            agent_id=f"agent{i}",
            pose=Pose2(rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(-math.pi, math.pi)),
        )
        for i in range(num_agents)
    )

    placed: list[tuple[float, float]] = []
    objects: list[SceneObject] = []
    gap2 = min_object_gap * min_object_gap
    for k in range(num_objects):
        for _ in range(200):
            x = rng.uniform(-hx, hx)
            y = rng.uniform(-hy, hy)
            if all((x - px) ** 2 + (y - py) ** 2 >= gap2 for px, py in placed):
                break
        else:
            raise ScenarioError(
                f"infeasible packing: could not place object {k + 1}/{num_objects} "
                f"with gap {min_object_gap} m in {area[0]} x {area[1]} m"
            )
        placed.append((x, y))
        objects.append(
            SceneObject(
                object_id=f"obj{k}",
                pose=Pose2(x, y, rng.uniform(-math.pi, math.pi)),
                length=rng.uniform(3.8, 5.2),
                width=rng.uniform(1.7, 2.1),
            )
        )
    return Scene(agents=agents, objects=tuple(objects), extent=extent)


def _draw(rng: np.random.Generator, kind: str, scale: float) -> float:
    if scale == 0.0:
        return 0.0
    if kind == _GAUSSIAN:
        return float(rng.normal(0.0, scale))
    return float(rng.laplace(0.0, scale))


def corrupt_pose(pose: Pose2, noise: NoiseSpec, rng: np.random.Generator) -> Pose2:
    """Perturb a pose with i.i.d. noise; zero scales return the input exactly."""
    dx = _draw(rng, noise.kind, noise.trans_scale)
    dy = _draw(rng, noise.kind, noise.trans_scale)
    dt = _draw(rng, noise.kind, math.radians(noise.rot_scale))
    return Pose2(pose.x + dx, pose.y + dy, pose.theta + dt)


def detect(
    scene: Scene,
    agent_id: str,
    spec: DetectorSpec,
    rng: np.random.Generator,
) -> list[BoxDetection]:
    """Noisy boxes for every visible object, in the agent's true local frame.

    Visibility uses the true agent pose (detection happens on the agent's own
    observations; pose error only enters through the shared measured pose).
    """
    agent = scene.agent(agent_id)
    inv_pose = inverse(agent.pose)
    ex, ey = scene.extent
    out: list[BoxDetection] = []
    for obj in scene.objects:
        local = compose(inv_pose, obj.pose)
        dist = math.hypot(local.x, local.y)
        if abs(local.x) > ex or abs(local.y) > ey or dist > spec.detection_range:
            continue
        if rng.random() < spec.miss_rate:
            continue
        scale = 1.0
        if spec.noise_scale_choices is not None:
            scale = spec.noise_scale_choices[int(rng.integers(len(spec.noise_scale_choices)))]
        center_sd = spec.center_noise_sd * scale
        heading_sd = spec.heading_noise_sd * scale
        nx = float(rng.normal(0.0, center_sd))
        ny = float(rng.normal(0.0, center_sd))
        nt = float(rng.normal(0.0, heading_sd))
        var_center = max(spec.variance_calibration * center_sd * center_sd, VARIANCE_FLOOR)
        var_heading = max(spec.variance_calibration * heading_sd * heading_sd, VARIANCE_FLOOR)
        confidence = min(max(spec.base_confidence - spec.confidence_decay * dist / spec.detection_range, 0.0), 1.0)
        out.append(
            BoxDetection(
                cx=local.x + nx,
                cy=local.y + ny,
                cz=0.0,
                length=obj.length,
                width=obj.width,
                height=1.6,
                theta=local.theta + nt,
                var_x=var_center,
                var_y=var_center,
                var_theta=var_heading,
                confidence=confidence,
                agent_id=agent_id,
            )
        )
    return out


def make_messages(
    scene: Scene,
    noise: NoiseSpec,
    det: DetectorSpec,
    seed: int,
) -> list[AgentMessage]:
    """One collaboration round: measured pose plus detections per agent."""
    messages = []
    for agent in scene.agents:
        pose_rng = np.random.default_rng(derive_seed(seed, agent.agent_id, "pose"))
        det_rng = np.random.default_rng(derive_seed(seed, agent.agent_id, "detect"))
        measured = corrupt_pose(agent.pose, noise, pose_rng)
        boxes = detect(scene, agent.agent_id, det, det_rng)
        messages.append(AgentMessage(agent.agent_id, measured, tuple(boxes)))
    return messages


# -- JSON wire formats ------------------------------------------------------
#
# Scene:    {"type": "scene", "version": 1, "extent": [ex, ey],
#            "agents": [{"id": str, "pose": [x, y, theta_rad]}, ...],
#            "objects": [{"id": str, "pose": [x, y, theta_rad],
#                         "length": m, "width": m}, ...]}
# Messages: {"type": "messages", "version": 1,
#            "messages": [{"agent_id": str, "measured_pose": [x, y, theta_rad],
#                          "boxes": [{"b": [cx, cy, cz, l, w, h, theta,
#                                           var_x, var_y, var_theta],
#                                     "confidence": c}, ...]}, ...]}


def _pose_to_list(p: Pose2) -> list[float]:
    return [p.x, p.y, p.theta]


def _pose_from_list(v, where: str) -> Pose2:
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ValueError(f"{where}: pose must be [x, y, theta]")
    return Pose2(float(v[0]), float(v[1]), float(v[2]))


def scene_to_dict(scene: Scene) -> dict:
    return {
        "type": "scene",
        "version": 1,
        "extent": [scene.extent[0], scene.extent[1]],
        "agents": [{"id": a.agent_id, "pose": _pose_to_list(a.pose)} for a in scene.agents],
        "objects": [
            {"id": o.object_id, "pose": _pose_to_list(o.pose), "length": o.length, "width": o.width}
            for o in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    if not isinstance(data, dict) or data.get("type") != "scene":
        raise ValueError("scene: expected an object with type == 'scene'")
    try:
        agents = tuple(
            SceneAgent(str(a["id"]), _pose_from_list(a["pose"], f"scene.agents[{i}]"))
            for i, a in enumerate(data["agents"])
        )
        objects = tuple(
            SceneObject(
                str(o["id"]),
                _pose_from_list(o["pose"], f"scene.objects[{i}]"),
                float(o["length"]),
                float(o["width"]),
            )
            for i, o in enumerate(data["objects"])
        )
        extent = (float(data["extent"][0]), float(data["extent"][1]))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"scene: malformed field ({exc!r})") from exc
    return Scene(agents=agents, objects=objects, extent=extent)


def messages_to_dict(messages: Sequence[AgentMessage]) -> dict:
    return {
        "type": "messages",
        "version": 1,
        "messages": [
            {
                "agent_id": m.agent_id,
                "measured_pose": _pose_to_list(m.measured_pose),
                "boxes": [{"b": b.as_vector(), "confidence": b.confidence} for b in m.boxes],
            }
            for m in messages
        ],
    }


def messages_from_dict(data: dict) -> list[AgentMessage]:
    if not isinstance(data, dict) or data.get("type") != "messages":
        raise ValueError("messages: expected an object with type == 'messages'")
    out = []
    try:
        for i, m in enumerate(data["messages"]):
            aid = str(m["agent_id"])
            boxes = tuple(
                box_from_vector(b["b"], float(b["confidence"]), aid) for b in m["boxes"]
            )
            out.append(AgentMessage(aid, _pose_from_list(m["measured_pose"], f"messages[{i}]"), boxes))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"messages: malformed field ({exc!r})") from exc
    return out


def save_json(data: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
