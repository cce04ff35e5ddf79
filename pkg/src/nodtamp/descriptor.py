"""Descriptor field: feature encoding and inverse pose optimization.

The analytic reference field maps a query pose to the concatenation, over a
fixed set of query points carried by the pose, of the sorted distances to the
k nearest cloud points. It is exactly invariant under a rigid transform
applied jointly to the pose and the cloud, and scale-equivariant, which is
everything the downstream algorithms rely on. A learned field can be swapped
in behind the same encode/optimize surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, DegenerateInputError, OptimizationError
from .geometry import Pose, PointCloud, TangentStep, random_quat, retract

_MIN_STEP = 1e-10


def default_query_set(radius: float = 0.05) -> "QuerySet":
    """Origin plus four tetrahedron vertices at the given radius."""
    verts = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    )
    verts[1:] *= radius / np.sqrt(3.0)
    return QuerySet(verts)


@dataclass(frozen=True)
class QuerySet:
    """Canonical query points, expressed in the query frame."""

    offsets: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        if pts.shape[0] < 4:
            raise ArgumentError("query set needs at least 4 points")
        centered = pts - pts.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-12) < 3:
            raise ArgumentError("query points must not be coplanar")
        pts.flags.writeable = False
        object.__setattr__(self, "offsets", pts)

    def __len__(self) -> int:
        return self.offsets.shape[0]


@dataclass(frozen=True)
class FieldConfig:
    """Analytic-field and inverse-optimization knobs.

    Defaults: k=8 neighbor distances per query, 8 restarts, 300 iterations of
    finite-difference gradient descent with backtracking from step 0.05.
    """

    k: int = 8
    query_set: QuerySet = field(default_factory=default_query_set)
    restarts: int = 8
    max_iters: int = 300
    step_size: float = 0.05
    fd_step: float = 1e-4
    tol: float = 1e-6
    seed: int = 0
    # When > 0, optimize_pose adds a global stage that screens this many
    # centroid-anchored rotations and seeds extra restarts from the best
    # ones. Off by default: warm-started callers never need it.
    search_rotations: int = 0

    @property
    def dim(self) -> int:
        return self.k * len(self.query_set)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "query_offsets": [[float(v) for v in p] for p in self.query_set.offsets],
            "restarts": self.restarts,
            "max_iters": self.max_iters,
            "step_size": self.step_size,
            "fd_step": self.fd_step,
            "tol": self.tol,
            "seed": self.seed,
            "search_rotations": self.search_rotations,
        }

    @staticmethod
    def from_json(obj: dict) -> "FieldConfig":
        kwargs = dict(obj)
        offsets = kwargs.pop("query_offsets", None)
        if offsets is not None:
            kwargs["query_set"] = QuerySet(np.asarray(offsets, dtype=float))
        return FieldConfig(**kwargs)


@dataclass(frozen=True)
class FeatureTrajectory:
    """Ordered descriptors for one skill trajectory."""

    steps: tuple
    mode: str  # "hand-object" | "object-object"

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(np.asarray(s, dtype=float) for s in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        return {"mode": self.mode, "steps": [[float(v) for v in s] for s in self.steps]}

    @staticmethod
    def from_json(obj: dict) -> "FeatureTrajectory":
        return FeatureTrajectory(tuple(np.asarray(s, dtype=float) for s in obj["steps"]), obj["mode"])


class FieldEvaluator:
    """Caches the cloud's KD-tree so repeated encodes against one cloud are cheap."""

    def __init__(self, cfg: FieldConfig, cloud: PointCloud):
        if len(cloud) == 0:
            raise DegenerateInputError("descriptor field conditioned on an empty cloud")
        if len(cloud) < cfg.k:
            raise DegenerateInputError(
                f"cloud of {len(cloud)} points smaller than k={cfg.k}"
            )
        self.cfg = cfg
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)
        self._offsets = cfg.query_set.offsets

    def encode_points(self, query_points: np.ndarray) -> np.ndarray:
        """Sorted k-NN distances per query point, flattened row-major."""
        d, _ = self._tree.query(query_points, k=self.cfg.k)
        return np.atleast_2d(d).reshape(-1)

    def encode(self, pose: Pose) -> np.ndarray:
        return self.encode_points(pose.apply(self._offsets))

    def residual(self, pose: Pose, target: np.ndarray) -> float:
        return float(np.linalg.norm(target - self.encode(pose)))

    def _feats_batch(self, poses: list[Pose]) -> np.ndarray:
        pts = np.concatenate([p.apply(self._offsets) for p in poses])
        d, _ = self._tree.query(pts, k=self.cfg.k)
        return d.reshape(len(poses), -1)

    def _residuals_batch(self, poses: list[Pose], target: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self._feats_batch(poses) - target, axis=1)

    def descend(self, pose: Pose, target: np.ndarray) -> tuple[Pose, float]:
        """Finite-difference gradient descent with backtracking line search.

        Residual is non-increasing across accepted iterations; terminates on
        tol, iteration budget, vanishing gradient, or line-search stall.
        """
        cfg = self.cfg
        res = self.residual(pose, target)
        if not np.isfinite(res):
            raise OptimizationError("non-finite residual at start", best_pose=pose)
        eye = np.eye(6)
        # Line searches start near the last accepted step instead of from
        # step_size every time; near convergence this saves most of the
        # backtracking halvings without changing what the descent can reach.
        step_mem = cfg.step_size
        for _ in range(cfg.max_iters):
            if res < cfg.tol:
                break
            probe = []
            for i in range(6):
                d = eye[i] * cfg.fd_step
                probe.append(retract(pose, TangentStep.from_vector(d)))
                probe.append(retract(pose, TangentStep.from_vector(-d)))
            r = self._residuals_batch(probe, target)
            if not np.all(np.isfinite(r)):
                raise OptimizationError("non-finite residual in gradient probe", best_pose=pose)
            grad = (r[0::2] - r[1::2]) / (2.0 * cfg.fd_step)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-14:
                break
            direction = -grad / gnorm
            step = min(cfg.step_size, step_mem * 4.0)
            accepted = False
            while step > _MIN_STEP:
                cand = retract(pose, TangentStep.from_vector(step * direction))
                rc = self.residual(cand, target)
                if not np.isfinite(rc):
                    raise OptimizationError("non-finite residual in line search", best_pose=pose)
                if rc < res:
                    pose, res = cand, rc
                    accepted = True
                    step_mem = step
                    break
                step *= 0.5
            if not accepted:
                break
        return pose, res

    def _refine_damped(
        self,
        pose: Pose,
        target: np.ndarray,
        max_iters: int = 50,
        abandon: tuple[int, float] | None = None,
    ) -> tuple[Pose, float]:
        """Damped least-squares refinement on the 6-dim tangent.

        Used only to seed restarts during the global search; answers returned
        by optimize_pose always pass through descend afterwards. ``abandon``
        = (iteration, residual) drops starts that have not made progress,
        which keeps screening many candidates affordable.
        """
        cfg = self.cfg
        lam = 1e-3
        r = self.encode(pose) - target
        cost = float(r @ r)
        eye = np.eye(6)
        for it in range(max_iters):
            if np.sqrt(cost) < cfg.tol * 0.1:
                break
            if abandon is not None and it == abandon[0] and np.sqrt(cost) > abandon[1]:
                break
            probes = []
            for i in range(6):
                d = eye[i] * cfg.fd_step
                probes.append(retract(pose, TangentStep.from_vector(d)))
                probes.append(retract(pose, TangentStep.from_vector(-d)))
            feats = self._feats_batch(probes)
            jac = np.stack(
                [(feats[2 * i] - feats[2 * i + 1]) / (2.0 * cfg.fd_step) for i in range(6)],
                axis=1,
            )
            grad = jac.T @ r
            hess = jac.T @ jac
            improved = False
            for _ in range(10):
                try:
                    delta = np.linalg.solve(
                        hess + lam * np.diag(np.diag(hess)) + 1e-12 * np.eye(6), -grad
                    )
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                cand = retract(pose, TangentStep.from_vector(delta))
                rc = self.encode(cand) - target
                cc = float(rc @ rc)
                if cc < cost:
                    pose, r, cost = cand, rc, cc
                    lam = max(lam * 0.3, 1e-8)
                    improved = True
                    break
                lam *= 10.0
            if not improved:
                break
        return pose, float(np.sqrt(cost))

    def search_pose(self, target: np.ndarray, max_tries: int = 250) -> tuple[Pose, float]:
        """Global pose search: screened rotations plus local restarts.

        Ranks ``cfg.search_rotations`` random rotations anchored at the cloud
        centroid by batch residual, refines them in order until one reaches
        an exact-fit certificate (residual below tol), and finally perturbs
        the best stalled minima to escape sub-millimeter kinks of the sorted
        nearest-neighbor field. Deterministic for a fixed cfg.seed.
        """
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        center = self.cloud.centroid()
        starts = [Pose(random_quat(rng), center) for _ in range(max(cfg.search_rotations, 1))]
        order = np.argsort(self._residuals_batch(starts, target), kind="stable")
        certificate = cfg.tol * 0.1
        stalls: list[tuple[float, Pose]] = []
        for n, i in enumerate(order):
            pose, res = self._refine_damped(starts[i], target, abandon=(4, 5e-3))
            stalls.append((res, pose))
            if res < certificate or n + 1 >= max_tries:
                break
        stalls.sort(key=lambda item: item[0])
        best_res, best_pose = stalls[0]
        if best_res >= certificate:
            for res0, pose0 in stalls[:3]:
                cur_pose, cur_res = pose0, res0
                for rd in range(25):
                    sr, st = (0.03, 0.003) if rd % 2 == 0 else (0.008, 0.0008)
                    vec = np.concatenate([rng.normal(size=3) * sr, rng.normal(size=3) * st])
                    kicked = retract(cur_pose, TangentStep.from_vector(vec))
                    pose, res = self._refine_damped(kicked, target)
                    if res < cur_res:
                        cur_pose, cur_res = pose, res
                    if cur_res < certificate:
                        break
                if cur_res < best_res:
                    best_pose, best_res = cur_pose, cur_res
                if best_res < certificate:
                    break
        return best_pose, best_res


def encode(cfg: FieldConfig, pose: Pose, cloud: PointCloud) -> np.ndarray:
    """Descriptor of a query pose against a cloud (both in the same frame)."""
    return FieldEvaluator(cfg, cloud).encode(pose)


def _initial_poses(cfg: FieldConfig, cloud: PointCloud, init: Pose | None) -> list[Pose]:
    rng = np.random.default_rng(cfg.seed)
    center = cloud.centroid()
    poses = [] if init is None else [init]
    while len(poses) < cfg.restarts:
        poses.append(Pose(random_quat(rng), center))
    return poses


def optimize_pose(
    cfg: FieldConfig,
    cloud: PointCloud,
    target: np.ndarray,
    init: Pose | None = None,
) -> Pose:
    """Recover the pose whose encoding best matches ``target``.

    Multi-start gradient descent on the 6-dim tangent; ``init`` (when given)
    is used as the first restart. Best pose = lowest residual, exact ties
    broken by restart index; restarts stop early once one reaches tol, which
    cannot change the winner under the tie-break.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    if target.shape[0] != cfg.dim:
        raise ArgumentError(
            f"target dimension {target.shape[0]} does not match field dimension {cfg.dim}"
        )
    ev = FieldEvaluator(cfg, cloud)
    best_pose, best_res = None, np.inf
    try:
        for start in _initial_poses(cfg, cloud, init):
            pose, res = ev.descend(start, target)
            if res < best_res:
                best_pose, best_res = pose, res
            if best_res < cfg.tol:
                break
        if best_res >= cfg.tol and cfg.search_rotations > 0:
            seed, _ = ev.search_pose(target)
            pose, res = ev.descend(seed, target)
            if res < best_res:
                best_pose, best_res = pose, res
    except OptimizationError as e:
        if best_pose is not None and e.best_pose is None:
            e.best_pose = best_pose
        raise
    return best_pose


def estimate_object_pose(
    cfg: FieldConfig,
    ref_cloud: PointCloud,
    new_cloud: PointCloud,
    init: Pose | None = None,
) -> Pose:
    """Category-consistent pseudo-pose of ``new_cloud``.

    The reference pose is identity rotation at the reference centroid; its
    descriptor against the reference cloud is matched on the new cloud. The
    centroid-anchored identity pose on the new cloud always serves as the
    first restart.
    """
    ref_pose = Pose(np.array([1.0, 0.0, 0.0, 0.0]), ref_cloud.centroid())
    target = encode(cfg, ref_pose, ref_cloud)
    if init is None:
        init = Pose(np.array([1.0, 0.0, 0.0, 0.0]), new_cloud.centroid())
    return optimize_pose(cfg, new_cloud, target, init=init)


def encode_trajectory(
    cfg: FieldConfig, poses: list[Pose], cloud: PointCloud, mode: str
) -> FeatureTrajectory:
    """Element-wise encode of a pose sequence against one cloud."""
    if not poses:
        raise ArgumentError("cannot encode an empty pose trajectory")
    ev = FieldEvaluator(cfg, cloud)
    return FeatureTrajectory(tuple(ev.encode(p) for p in poses), mode)


def decode_trajectory(
    cfg: FieldConfig,
    feats: FeatureTrajectory,
    cloud: PointCloud,
    init: Pose | list[Pose] | None = None,
) -> list[Pose]:
    """Sequential inverse optimization with warm starting.

    Step 0 runs the full multi-start (``init``, or its first element, as the
    first restart when given). Later steps descend from the previous solution,
    or from the matching per-step init when a full init trajectory is given
    and it starts closer in residual. Per-step inits matter when the field is
    nearly flat along some direction (long uniform channels), where descent
    from the previous step alone under-travels.
    """
    if len(feats) == 0:
        return []
    inits: list[Pose] | None = None
    if isinstance(init, (list, tuple)):
        if len(init) != len(feats):
            raise ArgumentError(
                f"init trajectory length {len(init)} does not match {len(feats)} feature steps"
            )
        inits, init = list(init), init[0]
    poses: list[Pose] = []
    ev = FieldEvaluator(cfg, cloud)
    for i, target in enumerate(feats.steps):
        target = np.asarray(target, dtype=float).reshape(-1)
        if target.shape[0] != cfg.dim:
            raise ArgumentError(f"feature step {i} has dimension {target.shape[0]}, expected {cfg.dim}")
        try:
            if i == 0:
                pose = optimize_pose(cfg, cloud, target, init=init)
            else:
                start = poses[-1]
                if inits is not None and ev.residual(inits[i], target) < ev.residual(start, target):
                    start = inits[i]
                pose, _ = ev.descend(start, target)
        except OptimizationError as e:
            e.step_index = i
            e.details["step_index"] = i
            raise
        poses.append(pose)
    return poses


def with_seed(cfg: FieldConfig, seed: int) -> FieldConfig:
    return replace(cfg, seed=seed)
