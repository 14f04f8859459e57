"""Synthetic multi-camera occlusion scenes with oracle visibility.

A flat target lies on a table; dark occluders (hands, tools) float above it
and wander on damped, reflecting random walks.  Each camera looks at the
table through its own rotation and offset, and occluders shift by a
per-camera parallax, so the same occluder hides the target in some views and
not in others.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .model import MultiCamSequence

TARGET_SHAPES = ("disk", "square", "ellipse", "diamond", "cross")


class DatasetError(Exception):
    """Missing or malformed dataset files; the message names the path."""


@dataclass
class SceneConfig:
    num_cameras: int = 5
    frames_per_seq: int = 200
    height: int = 32
    width: int = 32
    num_occluders: int = 5
    occluder_radius: tuple = (0.18, 0.3)
    occluder_step: float = 0.02
    occluder_momentum: float = 0.85
    occluder_box: float = 0.75
    occluder_positions: list | None = None
    target_radius: float = 0.38
    target_shape: str = "disk"
    target_drift: float = 0.015
    target_box: float = 0.2
    viewpoints: list | None = None
    viewpoint_offset: float = 0.45
    parallax: float = 0.5
    noise: float = 0.02
    seed: int = 0
    scene_id: int = 0
    hysteresis_margin: float = 0.05
    hysteresis_persistence: int = 2

    def __post_init__(self):
        self.occluder_radius = tuple(float(r) for r in self.occluder_radius)
        if self.num_cameras < 2:
            raise ValueError(f"num_cameras must be >= 2, got {self.num_cameras}")
        if self.frames_per_seq < 1 or self.height < 4 or self.width < 4:
            raise ValueError("frames_per_seq >= 1 and frame extents >= 4 required")
        if self.num_occluders < 0 or self.hysteresis_persistence < 1 or self.hysteresis_margin < 0:
            raise ValueError("num_occluders >= 0, hysteresis_persistence >= 1, hysteresis_margin >= 0 required")
        lo, hi = self.occluder_radius
        if not 0 < lo <= hi:
            raise ValueError(f"occluder_radius must satisfy 0 < min <= max, got {self.occluder_radius}")
        if self.target_radius <= 0 or self.parallax < 0 or self.occluder_step < 0:
            raise ValueError("target_radius > 0, parallax >= 0, occluder_step >= 0 required")
        if self.target_radius >= 1.0:
            raise ValueError(f"degenerate geometry: target radius {self.target_radius} does not fit in the frame")
        if self.target_shape not in TARGET_SHAPES:
            raise ValueError(f"target_shape must be one of {TARGET_SHAPES}")
        views = self.camera_views()
        if len({tuple(np.round(v, 12)) for v in views}) != len(views):
            raise ValueError("camera viewpoints must be pairwise distinct")

    def camera_views(self) -> np.ndarray:
        """[N, 5] rows of (rotation, offset_x, offset_y, parallax_x, parallax_y)."""
        if self.viewpoints is not None:
            views = np.asarray(self.viewpoints, dtype=np.float64)
            if views.shape != (self.num_cameras, 5):
                raise ValueError(f"viewpoints must have shape ({self.num_cameras}, 5), got {views.shape}")
            return views
        N = self.num_cameras
        ang = 2 * np.pi * np.arange(N) / N + 0.3
        rot = 0.6 * np.sin(ang * 1.7)
        return np.stack(
            [
                rot,
                self.viewpoint_offset * np.cos(ang),
                self.viewpoint_offset * np.sin(ang),
                self.parallax * np.cos(ang),
                self.parallax * np.sin(ang),
            ],
            axis=1,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["occluder_radius"] = list(self.occluder_radius)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SceneConfig keys: {sorted(unknown)}")
        return cls(**d)


def scene_preset(scene_id: int, base: SceneConfig | None = None, **overrides) -> SceneConfig:
    """Scene ids stand in for surgery types: each varies target shape and occluder behaviour."""
    base = base or SceneConfig()
    k = scene_id % len(TARGET_SHAPES)
    tweaks = dict(
        target_shape=TARGET_SHAPES[k],
        num_occluders=max(1, base.num_occluders + (0, 1, -1, 0, 1)[k]),
        occluder_step=base.occluder_step * (1.0, 0.8, 1.3, 1.15, 0.9)[k],
        scene_id=scene_id,
    )
    tweaks.update(overrides)
    return replace(base, **tweaks)


# ---------------------------------------------------------------------------
# rendering


def _target_mask(x, y, cfg: SceneConfig):
    r = cfg.target_radius
    shape = cfg.target_shape
    if shape == "disk":
        return x * x + y * y <= r * r
    if shape == "square":
        s = r * 0.886
        return (np.abs(x) <= s) & (np.abs(y) <= s)
    if shape == "ellipse":
        return (x / (1.3 * r)) ** 2 + (y / (0.77 * r)) ** 2 <= 1.0
    if shape == "diamond":
        return np.abs(x) + np.abs(y) <= 1.25 * r
    # cross
    a, b = 1.2 * r, 0.45 * r
    return ((np.abs(x) <= a) & (np.abs(y) <= b)) | ((np.abs(x) <= b) & (np.abs(y) <= a))


def _pixel_grid(height: int, width: int, pad: int = 0):
    """Normalized pixel-centre coordinates in [-1, 1] for the frame plus ``pad`` extra pixels each side."""
    ys = (np.arange(-pad, height + pad) + 0.5) / height * 2 - 1
    xs = (np.arange(-pad, width + pad) + 0.5) / width * 2 - 1
    return np.meshgrid(xs, ys)


def _walk(rng, pos, vel, step, momentum, box):
    vel = momentum * vel + step * rng.standard_normal(pos.shape)
    pos = pos + vel
    over = pos > box
    pos = np.where(over, 2 * box - pos, pos)
    vel = np.where(over, -vel, vel)
    under = pos < -box
    pos = np.where(under, -2 * box - pos, pos)
    vel = np.where(under, -vel, vel)
    return np.clip(pos, -box, box), vel


def simulate_sequence(cfg: SceneConfig) -> MultiCamSequence:
    """Render ``cfg.frames_per_seq`` frames from every camera plus oracle visibility and labels."""
    rng = np.random.default_rng(cfg.seed)
    N, H, W, steps = cfg.num_cameras, cfg.height, cfg.width, cfg.frames_per_seq
    views = cfg.camera_views()
    K = cfg.num_occluders
    lo, hi = cfg.occluder_radius
    radii = rng.uniform(lo, hi, size=K)
    if cfg.occluder_positions is not None:
        occ = np.asarray(cfg.occluder_positions, dtype=np.float64).reshape(K, 2)
    else:
        occ = rng.uniform(-cfg.occluder_box, cfg.occluder_box, size=(K, 2))
    occ_vel = np.zeros((K, 2))
    target = np.zeros(2)
    target_vel = np.zeros(2)

    pad = max(H, W)
    gx, gy = _pixel_grid(H, W, pad)
    inside = np.zeros(gx.shape, dtype=bool)
    inside[pad:pad + H, pad:pad + W] = True
    # per-camera world coordinates of every pixel centre (fixed over time)
    world = []
    for rot, ox, oy, _, _ in views:
        c, s = math.cos(rot), math.sin(rot)
        world.append((c * gx - s * gy + ox, s * gx + c * gy + oy))
    shading = [0.3 + 0.08 * np.sin(2.5 * wx + 1.3 * wy) for wx, wy in world]

    frames = np.zeros((steps, N, 1, H, W), dtype=np.uint8)
    visibility = np.zeros((steps, N))
    for t in range(steps):
        if t > 0:
            if cfg.occluder_step > 0:
                occ, occ_vel = _walk(rng, occ, occ_vel, cfg.occluder_step, cfg.occluder_momentum, cfg.occluder_box)
            if cfg.target_drift > 0:
                target, target_vel = _walk(rng, target, target_vel, cfg.target_drift, 0.9, cfg.target_box)
        noise = rng.standard_normal((N, H, W)) * cfg.noise
        for n in range(N):
            wx, wy = world[n]
            tx, ty = wx - target[0], wy - target[1]
            tmask = _target_mask(tx, ty, cfg)
            covered = np.zeros(gx.shape, dtype=bool)
            px, py = views[n, 3], views[n, 4]
            for k in range(K):
                dx = wx - (occ[k, 0] + px)
                dy = wy - (occ[k, 1] + py)
                covered |= dx * dx + dy * dy <= radii[k] ** 2
            # fraction of the target's in-frame pixels that no occluder covers
            total = np.count_nonzero(tmask & inside)
            seen = np.count_nonzero(tmask & ~covered & inside)
            # quantized to the 6 decimals stored on disk so round trips are exact
            visibility[t, n] = float(f"{seen / total:.6f}") if total else 0.0
            img = shading[n].copy()
            img = np.where(tmask, 0.8 + 0.1 * np.cos(6 * tx) * np.cos(6 * ty), img)
            img = np.where(covered, 0.08, img)
            img = img[pad:pad + H, pad:pad + W] + noise[n]
            frames[t, n, 0] = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    labels = annotate_labels(visibility, cfg.hysteresis_margin, cfg.hysteresis_persistence)
    return MultiCamSequence(
        frames, labels, visibility, seq_id=f"scene{cfg.scene_id}_seed{cfg.seed}", scene_id=cfg.scene_id,
        meta={"scene": cfg.to_dict()},
    )


# ---------------------------------------------------------------------------
# scripted annotator


def annotate_labels(visibility, margin: float, persistence: int) -> np.ndarray:
    """Hysteresis labelling that imitates a human editor's reluctance to cut.

    Frame 0 takes the most visible camera.  Afterwards a challenger replaces the
    current camera once it has beaten it by more than ``margin`` on
    ``persistence`` consecutive frames; the cut lands on the frame that
    completes the run.  Simultaneous winners resolve to the highest
    visibility, then the lowest index.
    """
    v = np.asarray(visibility, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError(f"visibility must be [T, N], got {v.shape}")
    steps, N = v.shape
    labels = np.zeros(steps, dtype=np.int64)
    cur = int(np.argmax(v[0]))
    labels[0] = cur
    runs = np.zeros(N, dtype=np.int64)
    for t in range(1, steps):
        beats = v[t] - v[t, cur] > margin
        runs = np.where(beats, runs + 1, 0)
        ready = np.flatnonzero(runs >= persistence)
        if ready.size:
            best = ready[np.argmax(v[t, ready])]
            cur = int(best)
            runs[:] = 0
        labels[t] = cur
    return labels


# ---------------------------------------------------------------------------
# dataset generation and I/O


def generate_dataset(base: SceneConfig, scene_ids, seeds) -> list[MultiCamSequence]:
    """One sequence per (scene, seed); per-sequence rng seeds derive from both."""
    seqs = []
    for s in scene_ids:
        for k in seeds:
            seed = int(np.random.SeedSequence([int(base.seed), int(s), int(k)]).generate_state(1)[0])
            cfg = scene_preset(int(s), base, seed=seed)
            seq = simulate_sequence(cfg)
            seq.seq_id = f"scene{s}_seq{k}"
            seqs.append(seq)
    return seqs


def subsample(seq: MultiCamSequence, stride: int) -> MultiCamSequence:
    """Keep frames 0, stride, 2*stride, ... with their labels and visibility."""
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be an integer >= 1, got {stride}")
    sl = slice(None, None, int(stride))
    vis = None if seq.visibility is None else seq.visibility[sl]
    return MultiCamSequence(seq.frames[sl], seq.labels[sl], vis, seq.seq_id, seq.scene_id, dict(seq.meta))


def write_pgm(path: Path, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DatasetError(f"missing frame file: {path}") from None
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"truncated PGM header: {path}")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise DatasetError(f"not a binary PGM (P5) file: {path}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError(f"corrupt PGM header: {path}") from None
    if maxval != 255:
        raise DatasetError(f"only 8-bit PGM supported, maxval={maxval}: {path}")
    pos += 1
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise DatasetError(f"truncated PGM payload: {path}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_dataset(seqs, directory) -> dict:
    """Write sequences in the PGM/CSV layout plus ``manifest.json``; returns the manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in seqs:
        if seq.frames.shape[2] != 1:
            raise DatasetError("only single-channel frames can be written as PGM")
        sdir = root / seq.seq_id
        steps, N = seq.frames.shape[:2]
        frame_paths = []
        for n in range(N):
            cdir = sdir / f"cam{n}"
            cdir.mkdir(parents=True, exist_ok=True)
            for t in range(steps):
                write_pgm(cdir / f"frame{t:06d}.pgm", seq.frames[t, n, 0])
            frame_paths.append(f"{seq.seq_id}/cam{n}")
        with open(sdir / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "label"])
            for t, lab in enumerate(seq.labels):
                w.writerow([t, int(lab)])
        entry = {
            "sequence_id": seq.seq_id,
            "scene_id": int(seq.scene_id),
            "num_cameras": int(N),
            "num_frames": int(steps),
            "frames": frame_paths,
            "labels": f"{seq.seq_id}/labels.csv",
            "visibility": None,
        }
        if seq.visibility is not None:
            with open(sdir / "visibility.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t"] + [f"v{n}" for n in range(N)])
                for t in range(steps):
                    w.writerow([t] + [f"{x:.6f}" for x in seq.visibility[t]])
            entry["visibility"] = f"{seq.seq_id}/visibility.csv"
        entries.append(entry)
    manifest = {"format": "deepselect-dataset", "version": 1, "sequences": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"missing manifest: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt manifest {path}: {exc}") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("sequences"), list):
        raise DatasetError(f"manifest has no 'sequences' list: {path}")
    return manifest


def _read_csv(path: Path, header_prefix: str) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DatasetError(f"missing file: {path}") from None
    if not rows or not rows[0] or rows[0][0] != header_prefix:
        raise DatasetError(f"bad CSV header in {path}")
    return rows[1:]


def read_dataset(directory) -> list[MultiCamSequence]:
    root = Path(directory)
    manifest = read_manifest(root)
    seqs = []
    for entry in manifest["sequences"]:
        try:
            sid, N, steps = entry["sequence_id"], int(entry["num_cameras"]), int(entry["num_frames"])
            frame_dirs, label_path = entry["frames"], entry["labels"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"manifest entry malformed ({exc}): {root / 'manifest.json'}") from None
        if len(frame_dirs) != N:
            raise DatasetError(f"{sid}: manifest lists {len(frame_dirs)} camera dirs for {N} cameras")
        first = read_pgm(root / frame_dirs[0] / "frame000000.pgm")
        frames = np.zeros((steps, N, 1) + first.shape, dtype=np.uint8)
        for n, d in enumerate(frame_dirs):
            for t in range(steps):
                img = read_pgm(root / d / f"frame{t:06d}.pgm")
                if img.shape != first.shape:
                    raise DatasetError(f"frame size {img.shape} != {first.shape}: {root / d / f'frame{t:06d}.pgm'}")
                frames[t, n, 0] = img
        rows = _read_csv(root / label_path, "t")
        if len(rows) != steps:
            raise DatasetError(f"{root / label_path}: {len(rows)} labels for {steps} frames")
        labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
        vis = None
        if entry.get("visibility"):
            vrows = _read_csv(root / entry["visibility"], "t")
            if len(vrows) != steps:
                raise DatasetError(f"{root / entry['visibility']}: {len(vrows)} rows for {steps} frames")
            vis = np.array([[float(x) for x in r[1:]] for r in vrows])
        seqs.append(MultiCamSequence(frames, labels, vis, seq_id=sid, scene_id=int(entry.get("scene_id", 0))))
    return seqs
