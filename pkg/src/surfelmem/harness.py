"""Autoregressive exploration episodes and retrieval-quality metrics.

An episode walks a camera trajectory in steps of M views: retrieve context
from the memory, reveal the ground-truth frames (standing in for a generator),
write them back, and log what was retrieved. Scoring compares each frame's
retrieved context against visibility oracles and reports pose-consistency
sanity channels.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import Camera, CameraPose, Quaternion, rotation_distance, translation_distance
from .retrieval import RetrievalConfig, retrieve
from .store import MergeConfig, SurfelStore, View
from .world import NoiseParams, Scene, coverage, perturb_depth, render, visibility_oracle

ORACLE_GRID = 64
REGISTER_MAX_POINTS = 2048


@dataclass
class Trajectory:
    """Ordered cameras walked in steps of step_size views."""

    cameras: list[Camera]
    step_size: int = 4
    name: str = ""

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("trajectory needs at least one camera")
        if self.step_size < 1:
            raise ValueError("step_size must be >= 1")

    def __len__(self) -> int:
        return len(self.cameras)


def cycle_protocol(traj: Trajectory) -> Trajectory:
    """Concatenate a trajectory with its own reverse, sharing the turning pose."""
    if len(traj.cameras) < 2:
        raise ValueError("cycle protocol needs at least 2 cameras")
    cams = list(traj.cameras) + list(traj.cameras[-2::-1])
    return Trajectory(cams, traj.step_size, traj.name + "+cycle")


@dataclass
class StepRecord:
    index: int
    frame_indices: list[int]
    retrieved: list[int]
    surfel_count: int
    retrieval_ms: float
    write_ms: float
    nms_discarded: list[int]
    coverage: dict[int, float]
    recovered: dict[int, list[float]]  # frame -> [qw qx qy qz tx ty tz]


@dataclass
class EpisodeLog:
    settings: dict
    initial_frame: int
    initial_recovered: list[float]
    steps: list[StepRecord] = field(default_factory=list)
    snapshot_path: str | None = None

    def __post_init__(self):
        self.store: SurfelStore | None = None  # set by run_exploration, not serialized

    def to_dict(self, include_timings: bool = True) -> dict:
        d = {
            "settings": self.settings,
            "initial_frame": self.initial_frame,
            "initial_recovered": self.initial_recovered,
            "snapshot_path": self.snapshot_path,
            "steps": [asdict(s) for s in self.steps],
        }
        if not include_timings:
            for s in d["steps"]:
                s.pop("retrieval_ms")
                s.pop("write_ms")
        return d

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), sort_keys=True, indent=2)

    def all_frames(self) -> list[int]:
        out = [self.initial_frame]
        for s in self.steps:
            out.extend(s.frame_indices)
        return out


class _VisibilityCache:
    """Memoizes visibility oracle sets per camera pose."""

    def __init__(self, scene: Scene, grid: int = ORACLE_GRID):
        self.scene = scene
        self.grid = grid
        self._sets: dict[tuple, np.ndarray] = {}

    def get(self, camera: Camera) -> np.ndarray:
        q = camera.pose.rotation
        t = camera.pose.translation
        i = camera.intrinsics
        key = (q.w, q.x, q.y, q.z, t[0], t[1], t[2], i.focal, i.width, i.height)
        if key not in self._sets:
            self._sets[key] = visibility_oracle(self.scene, camera, self.grid)
        return self._sets[key]


def rigid_register(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform (R, t) with dst ~= src @ R.T + t (Kabsch)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def _recover_pose(clean_points: np.ndarray, noisy_points: np.ndarray, mask: np.ndarray,
                  commanded: CameraPose) -> list[float]:
    """Registration-based pose estimate: where the written geometry says the camera was."""
    idx = np.flatnonzero(mask.reshape(-1))
    if len(idx) < 3:
        q, t = commanded.rotation, commanded.translation
        return [q.w, q.x, q.y, q.z, t[0], t[1], t[2]]
    if len(idx) > REGISTER_MAX_POINTS:
        idx = idx[:: len(idx) // REGISTER_MAX_POINTS + 1]
    src = clean_points.reshape(-1, 3)[idx]
    dst = noisy_points.reshape(-1, 3)[idx]
    R_reg, t_reg = rigid_register(src, dst)
    R = R_reg @ commanded.matrix
    t = R_reg @ commanded.translation + t_reg
    q = Quaternion.from_matrix(R)
    return [q.w, q.x, q.y, q.z, t[0], t[1], t[2]]


def run_exploration(
    scene: Scene,
    trajectory: Trajectory,
    retrieval_cfg: RetrievalConfig,
    merge_cfg: MergeConfig | None = None,
    noise: NoiseParams | None = None,
) -> EpisodeLog:
    """Run one autoregressive episode; returns the log with `.store` attached.

    The first camera is the given input view: rendered and written, never
    retrieved for. Each later step of M cameras retrieves context, reveals the
    ground truth (optionally depth-noised), scores coverage against the
    visibility oracle, and writes the new views.
    """
    merge_cfg = merge_cfg or MergeConfig()
    noise = noise or NoiseParams()
    store = SurfelStore(merge_cfg, scene_diagonal=scene.diagonal)
    store.retrieval_config = retrieval_cfg
    vis = _VisibilityCache(scene)
    cams = trajectory.cameras
    M = trajectory.step_size

    def reveal(camera: Camera, frame: int):
        clean = render(scene, camera)
        noisy = perturb_depth(clean, noise, frame)
        recovered = _recover_pose(
            clean.pointmap.points, noisy.pointmap.points,
            clean.pointmap.valid & noisy.pointmap.valid, camera.pose,
        )
        return noisy, recovered

    noisy1, rec1 = reveal(cams[0], 1)
    store.write_views([View(1, noisy1.rgb, cams[0])], [noisy1.pointmap])
    log = EpisodeLog(
        settings={
            "trajectory": trajectory.name,
            "frames": len(cams),
            "m": M,
            "strategy": retrieval_cfg.strategy,
            "k": retrieval_cfg.k,
            "render": [retrieval_cfg.render_width, retrieval_cfg.render_height],
            "retrieval_nms": [retrieval_cfg.nms_rot_deg, retrieval_cfg.nms_trans],
            "merge": asdict(merge_cfg),
            "noise": asdict(noise),
            "scene_diagonal": scene.diagonal,
            "oracle_grid": vis.grid,
        },
        initial_frame=1,
        initial_recovered=rec1,
    )
    log.store = store

    for s, start in enumerate(range(1, len(cams), M), start=1):
        chunk = cams[start : start + M]
        t0 = time.perf_counter()
        retrieved = retrieve(store, chunk, retrieval_cfg)
        retrieval_ms = (time.perf_counter() - t0) * 1000.0
        i_star = [v.frame_index for v in retrieved]
        context_vis = [vis.get(v.camera) for v in retrieved]

        frames = list(range(store.next_frame, store.next_frame + len(chunk)))
        views, pointmaps = [], []
        cov: dict[int, float] = {}
        recovered_map: dict[int, list[float]] = {}
        for cam, frame in zip(chunk, frames):
            noisy, recovered = reveal(cam, frame)
            views.append(View(frame, noisy.rgb, cam))
            pointmaps.append(noisy.pointmap)
            cov[frame] = coverage(vis.get(cam), context_vis)
            recovered_map[frame] = recovered
        t0 = time.perf_counter()
        report = store.write_views(views, pointmaps)
        write_ms = (time.perf_counter() - t0) * 1000.0

        log.steps.append(
            StepRecord(
                index=s,
                frame_indices=frames,
                retrieved=i_star,
                surfel_count=store.surfel_count,
                retrieval_ms=retrieval_ms,
                write_ms=write_ms,
                nms_discarded=report.views_discarded,
                coverage=cov,
                recovered=recovered_map,
            )
        )
    return log


# -- scoring -----------------------------------------------------------------


@dataclass
class MetricsReport:
    strategy: str
    k: int
    settings: dict
    frames: list[dict]
    mean_coverage: float
    revisit_recall: float | None
    revisit_recall_far_half: float | None
    mean_r_dist: float
    mean_t_dist: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def detect_cycle_turn(trajectory: Trajectory) -> int | None:
    """Index L (1-based frame) of the turning pose when the path is a cycle."""
    n = len(trajectory.cameras)
    if n < 3 or n % 2 == 0:
        return None
    for i in range(n):
        a = trajectory.cameras[i].pose
        b = trajectory.cameras[n - 1 - i].pose
        if translation_distance(a.translation, b.translation) > 1e-9:
            return None
        # acos of a clamped near-1 trace has a ~3e-8 noise floor even for
        # bit-identical rotations.
        if rotation_distance(a.rotation, b.rotation) > 1e-6:
            return None
    return (n + 1) // 2


def _relative_chain(poses: list[tuple[np.ndarray, np.ndarray]]):
    """Rotations/translations expressed relative to the first pose."""
    R0, t0 = poses[0]
    out = []
    for R, t in poses:
        out.append((R0.T @ R, R0.T @ (t - t0)))
    return out


def score_episode(
    log: EpisodeLog,
    scene: Scene,
    trajectory: Trajectory,
    stride: int = 1,
) -> MetricsReport:
    """Turn an episode log into per-frame and aggregate retrieval metrics.

    Coverage comes straight from the log. Revisit recall is computed on cycle
    trajectories: a return-leg frame scores a hit when its retrieved set
    contains an outbound frame whose pose lies near the pose-matched outbound
    location. Pose channels compare commanded poses against the poses
    recovered from the written (possibly noisy) point maps, expressed relative
    to the first frame with translations normalized by the furthest frame.
    """
    if len(trajectory.cameras) != log.settings.get("frames"):
        raise ValueError("trajectory does not match episode log")
    cams = trajectory.cameras
    turn = detect_cycle_turn(trajectory)
    diag = scene.diagonal
    merge = log.settings["merge"]
    # Locality for "same place" on revisits: twice the write-NMS thresholds.
    loc_rot = 2.0 * merge["view_nms_rot_deg"]
    loc_trans = 2.0 * merge["view_nms_trans"] * diag

    recovered: dict[int, list[float]] = {log.initial_frame: log.initial_recovered}
    retrieved_of: dict[int, list[int]] = {}
    cov_of: dict[int, float] = {}
    for s in log.steps:
        for f in s.frame_indices:
            retrieved_of[f] = s.retrieved
            cov_of[f] = s.coverage[f]
            recovered[f] = s.recovered[f]

    all_frames = log.all_frames()
    gt_poses = [(cams[f - 1].pose.matrix, cams[f - 1].pose.translation) for f in all_frames]
    rec_poses = []
    for f in all_frames:
        q = Quaternion.from_array(recovered[f][:4])
        rec_poses.append((q.to_matrix(), np.asarray(recovered[f][4:])))
    gt_rel = _relative_chain(gt_poses)
    rec_rel = _relative_chain(rec_poses)
    scale = max(float(np.linalg.norm(t)) for _, t in gt_rel)
    if scale < 1e-12:
        scale = 1.0

    frames_out: list[dict] = []
    hits: list[bool] = []
    far_hits: list[bool] = []
    generated = [f for f in all_frames if f != log.initial_frame]
    scored = set(generated[::stride])
    for pos, f in enumerate(all_frames):
        if f == log.initial_frame or f not in scored:
            continue
        r_dist = rotation_distance(gt_rel[pos][0], rec_rel[pos][0])
        t_dist = float(np.linalg.norm(gt_rel[pos][1] - rec_rel[pos][1])) / scale
        rec: dict = {
            "frame": f,
            "coverage": cov_of[f],
            "retrieved": retrieved_of[f],
            "r_dist": r_dist,
            "t_dist": t_dist,
            "revisit_hit": None,
        }
        if turn is not None and f > turn:
            pose = cams[f - 1].pose
            matched = min(
                range(1, turn + 1),
                key=lambda j: translation_distance(cams[j - 1].pose.translation, pose.translation)
                + diag * rotation_distance(cams[j - 1].pose.rotation, pose.rotation) / math.pi,
            )
            m_pose = cams[matched - 1].pose
            hit = any(
                t <= turn
                and translation_distance(cams[t - 1].pose.translation, m_pose.translation) < loc_trans
                and rotation_distance(cams[t - 1].pose.rotation, m_pose.rotation)
                < math.radians(loc_rot)
                for t in retrieved_of[f]
            )
            rec["revisit_hit"] = hit
            hits.append(hit)
            if matched <= (turn + 1) // 2:
                far_hits.append(hit)
        frames_out.append(rec)

    coverages = [r["coverage"] for r in frames_out]
    return MetricsReport(
        strategy=log.settings["strategy"],
        k=log.settings["k"],
        settings=dict(log.settings, stride=stride),
        frames=frames_out,
        mean_coverage=float(np.mean(coverages)) if coverages else 0.0,
        revisit_recall=(sum(hits) / len(hits)) if hits else None,
        revisit_recall_far_half=(sum(far_hits) / len(far_hits)) if far_hits else None,
        mean_r_dist=float(np.mean([r["r_dist"] for r in frames_out])) if frames_out else 0.0,
        mean_t_dist=float(np.mean([r["t_dist"] for r in frames_out])) if frames_out else 0.0,
    )


def run_ablation(
    scene: Scene,
    trajectory: Trajectory,
    strategies: list[str],
    k_values: list[int],
    merge_cfg: MergeConfig | None = None,
    noise: NoiseParams | None = None,
    base_cfg: RetrievalConfig | None = None,
    stride: int = 1,
) -> list[MetricsReport]:
    """Grid of episodes over strategies x context sizes with shared seeds."""
    base = base_cfg or RetrievalConfig()
    reports = []
    for k in k_values:
        for strategy in strategies:
            cfg = RetrievalConfig(
                k=k,
                render_width=base.render_width,
                render_height=base.render_height,
                nms_rot_deg=base.nms_rot_deg,
                nms_trans=base.nms_trans,
                strategy=strategy,
            )
            log = run_exploration(scene, trajectory, cfg, merge_cfg, noise)
            reports.append(score_episode(log, scene, trajectory, stride=stride))
    return reports
