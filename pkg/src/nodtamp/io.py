"""File formats: canonical JSON, scene serialization, run configuration,
and depth-pixel backprojection.

All artifacts are JSON with sorted keys so identical runs produce byte-
identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .adaptation import SceneEntry, SceneGraph
from .descriptor import FieldConfig
from .errors import DataError, SchemaError
from .geometry import Pose, PointCloud


def canonical_dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, indent=1)


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj) + "\n")


def read_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file: {path}", path=str(path))
    try:
        return json.loads(path.read_text())
    except ValueError as e:
        raise SchemaError(f"invalid JSON in {path}: {e}", path=str(path)) from e


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus camera-to-target extrinsics."""

    k: np.ndarray
    extrinsics: Pose = dc_field(default_factory=Pose.identity)

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float).reshape(3, 3)
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise DataError("focal lengths must be positive")
        k.flags.writeable = False
        object.__setattr__(self, "k", k)

    def to_json(self) -> dict:
        return {"k": [[float(v) for v in row] for row in self.k], "extrinsics": self.extrinsics.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(np.asarray(obj["k"], dtype=float), Pose.from_json(obj["extrinsics"]))


def backproject(cam: CameraIntrinsics, pixels) -> PointCloud:
    """Depth pixels (u, v, d) to a cloud: p = R @ K^-1 @ (u d, v d, d) + t."""
    px = np.asarray(pixels, dtype=float).reshape(-1, 3)
    if np.any(px[:, 2] <= 0):
        raise DataError("backprojection requires strictly positive depth")
    rays = np.column_stack([px[:, 0] * px[:, 2], px[:, 1] * px[:, 2], px[:, 2]])
    pts = rays @ np.linalg.inv(cam.k).T
    return PointCloud(cam.extrinsics.apply(pts), "world")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run, serializable as one JSON file."""

    field: FieldConfig = dc_field(default_factory=FieldConfig)
    task: str = "peg_insertion"
    seeds: list[int] = dc_field(default_factory=lambda: list(range(20)))
    noise_sigma: float = 0.0
    sigmas: list[float] = dc_field(default_factory=lambda: [0.0005, 0.001, 0.0015, 0.002])
    trim_k: int = 20
    workers: int = 1
    library_dir: str = "library"
    ablate_reasoning: bool = False

    def to_json(self) -> dict:
        return {
            "field": self.field.to_json(),
            "task": self.task,
            "seeds": list(self.seeds),
            "noise_sigma": self.noise_sigma,
            "sigmas": list(self.sigmas),
            "trim_k": self.trim_k,
            "workers": self.workers,
            "library_dir": self.library_dir,
            "ablate_reasoning": self.ablate_reasoning,
        }

    @staticmethod
    def from_json(obj: dict) -> "RunConfig":
        try:
            return RunConfig(
                field=FieldConfig.from_json(obj.get("field", FieldConfig().to_json())),
                task=obj.get("task", "peg_insertion"),
                seeds=[int(s) for s in obj.get("seeds", range(20))],
                noise_sigma=float(obj.get("noise_sigma", 0.0)),
                sigmas=[float(s) for s in obj.get("sigmas", [0.0005, 0.001, 0.0015, 0.002])],
                trim_k=int(obj.get("trim_k", 20)),
                workers=int(obj.get("workers", 1)),
                library_dir=str(obj.get("library_dir", "library")),
                ablate_reasoning=bool(obj.get("ablate_reasoning", False)),
            )
        except (TypeError, ValueError) as e:
            raise SchemaError(f"malformed run config: {e}") from e


def scene_to_json(scene: SceneGraph) -> dict:
    return {
        "ee_pose": scene.ee_pose.to_json(),
        "categories": dict(scene.categories),
        "entries": {
            name: {
                "cloud": e.cloud.to_json(),
                "pose": e.pose.to_json(),
                "parent": e.parent,
                "rel_to_parent": None if e.rel_to_parent is None else e.rel_to_parent.to_json(),
            }
            for name, e in scene.entries.items()
        },
    }


def scene_from_json(obj: dict) -> SceneGraph:
    try:
        entries = {
            name: SceneEntry(
                cloud=PointCloud.from_json(e["cloud"]),
                pose=Pose.from_json(e["pose"]),
                parent=e.get("parent"),
                rel_to_parent=(
                    None if e.get("rel_to_parent") is None else Pose.from_json(e["rel_to_parent"])
                ),
            )
            for name, e in obj["entries"].items()
        }
        return SceneGraph(
            entries=entries,
            ee_pose=Pose.from_json(obj["ee_pose"]),
            categories=dict(obj.get("categories", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed scene: missing or invalid field {e}") from e
