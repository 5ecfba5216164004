"""Skeleton clips: text I/O, input streams, and a synthetic relational task.

Clip files are plain text::

    T <frames> V <joints> label <int> [subject <token>] [camera <token>]
    x_0 y_0 z_0 x_1 y_1 z_1 ... x_{V-1} y_{V-1} z_{V-1}     # frame 0
    ...                                                        # T lines total

Values are whitespace separated; floats are written with ``repr`` so a
save/load round trip is exact. Blank lines are not allowed inside a clip.

A dataset manifest lists one clip per line as ``<path> <label>``; relative
paths resolve against the manifest's directory, ``#`` starts a comment
line.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cdgc.errors import FormatError, GraphError, ParseError
from cdgc.graph import NTU_NUM_JOINTS, UNREACHABLE, SkeletonGraph


class StreamKind(str, enum.Enum):
    JOINT = "joint"
    BONE = "bone"
    JOINT_MOTION = "joint_motion"
    BONE_MOTION = "bone_motion"


@dataclass(eq=False)
class SkeletonClip:
    joints: np.ndarray  # (T, V, 3), meters
    label: int
    subject: str | None = None
    camera: str | None = None

    def __post_init__(self):
        self.joints = np.ascontiguousarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[2] != 3 or self.joints.shape[0] < 1:
            raise ValueError(f"joints must be (T >= 1, V, 3), got {self.joints.shape}")
        if not np.isfinite(self.joints).all():
            raise ValueError("joint coordinates must be finite")
        self.label = int(self.label)

    @property
    def num_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SkeletonClip):
            return NotImplemented
        return (self.label == other.label and self.subject == other.subject
                and self.camera == other.camera and self.joints.shape == other.joints.shape
                and self.joints.tobytes() == other.joints.tobytes())


# -- clip text format ---------------------------------------------------------------

def format_clip(clip: SkeletonClip) -> str:
    head = f"T {clip.num_frames} V {clip.num_joints} label {clip.label}"
    for key in ("subject", "camera"):
        val = getattr(clip, key)
        if val is not None:
            if not val or any(ch.isspace() for ch in val):
                raise ValueError(f"{key} must be a non-empty token without whitespace")
            head += f" {key} {val}"
    lines = [head]
    for frame in clip.joints:
        lines.append(" ".join(repr(v) for v in frame.reshape(-1).tolist()))
    return "\n".join(lines) + "\n"


def parse_clip(text: str, path: str | None = None) -> SkeletonClip:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty clip file", 1, path)
    toks = lines[0].split()
    if len(toks) < 6 or toks[0] != "T" or toks[2] != "V" or toks[4] != "label":
        raise ParseError("header must start with 'T <frames> V <joints> label <int>'", 1, path)
    try:
        T, V, label = int(toks[1]), int(toks[3]), int(toks[5])
    except ValueError:
        raise ParseError("header counts and label must be integers", 1, path) from None
    if T < 1 or V < 1:
        raise ParseError(f"T and V must be positive, got T={T} V={V}", 1, path)
    meta: dict[str, str] = {}
    rest = toks[6:]
    if len(rest) % 2:
        raise ParseError(f"dangling header token {rest[-1]!r}", 1, path)
    for key, val in zip(rest[::2], rest[1::2]):
        if key not in ("subject", "camera") or key in meta:
            raise ParseError(f"unexpected header field {key!r}", 1, path)
        meta[key] = val
    body = lines[1:]
    if len(body) < T:
        raise ParseError(f"file ends after {len(body)} of {T} frames", len(lines) + 1, path)
    if len(body) > T:
        raise ParseError(f"unexpected content after frame {T}", T + 2, path)
    joints = np.empty((T, V * 3))
    for t, line in enumerate(body):
        lineno = t + 2
        vals = line.split()
        if len(vals) != 3 * V:
            if len(vals) % 3 == 0:
                raise FormatError(f"frame has {len(vals) // 3} joints, header declares V={V}", lineno, path)
            raise ParseError(f"expected {3 * V} values, got {len(vals)}", lineno, path)
        try:
            row = [float(v) for v in vals]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", lineno, path) from None
        if not all(math.isfinite(v) for v in row):
            raise ParseError("non-finite coordinate", lineno, path)
        joints[t] = row
    return SkeletonClip(joints.reshape(T, V, 3), label, meta.get("subject"), meta.get("camera"))


def save_clip(clip: SkeletonClip, path) -> None:
    Path(path).write_text(format_clip(clip))


def load_clip(path) -> SkeletonClip:
    path = Path(path)
    return parse_clip(path.read_text(), str(path))


def load_manifest(path) -> list[tuple[Path, int]]:
    path = Path(path)
    out = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ParseError("expected '<path> <label>'", lineno, str(path))
        try:
            label = int(toks[1])
        except ValueError:
            raise ParseError(f"label must be an integer, got {toks[1]!r}", lineno, str(path)) from None
        clip_path = Path(toks[0])
        if not clip_path.is_absolute():
            clip_path = path.parent / clip_path
        out.append((clip_path, label))
    return out


def write_manifest(entries, path) -> None:
    Path(path).write_text("".join(f"{p} {label}\n" for p, label in entries))


def load_manifest_clips(path) -> list[SkeletonClip]:
    clips = []
    for clip_path, label in load_manifest(path):
        clip = load_clip(clip_path)
        if clip.label != label:
            raise FormatError(f"manifest label {label} disagrees with clip label {clip.label}", None, str(clip_path))
        clips.append(clip)
    return clips


# -- streams ------------------------------------------------------------------------

def bone_sources(graph: SkeletonGraph) -> np.ndarray:
    """Source joint of the bone stored at each vertex (``-1`` at the center).

    The source is the lowest-index neighbor one hop closer to the center.
    """
    if not graph.edges:
        raise ValueError("bone streams need a graph with edges")
    dist = graph.center_distance
    if (dist == UNREACHABLE).any():
        raise GraphError("bone streams need a connected graph")
    src = np.full(graph.num_vertices, -1, dtype=np.int64)
    for v, nbrs in enumerate(graph.neighbors):
        closer = [u for u in nbrs if dist[u] == dist[v] - 1]
        if closer:
            src[v] = closer[0]
    return src


def _motion(s: np.ndarray) -> np.ndarray:
    m = np.zeros_like(s)
    m[:, :-1] = s[:, 1:] - s[:, :-1]
    return m


def derive_stream(clip: SkeletonClip, kind, graph: SkeletonGraph) -> np.ndarray:
    """Feature map ``(1, 3, T, V)`` with channels x, y, z."""
    kind = StreamKind(kind)
    if clip.num_joints != graph.num_vertices:
        raise ValueError(f"clip has {clip.num_joints} joints, graph has {graph.num_vertices}")
    joint = clip.joints.transpose(2, 0, 1)  # (3, T, V)
    if kind in (StreamKind.BONE, StreamKind.BONE_MOTION):
        src = bone_sources(graph)
        s = np.zeros_like(joint)
        has = src >= 0
        s[:, :, has] = joint[:, :, has] - joint[:, :, src[has]]
    else:
        s = joint.copy()
    if kind in (StreamKind.JOINT_MOTION, StreamKind.BONE_MOTION):
        s = _motion(s)
    return np.ascontiguousarray(s[None])


def stack_stream(clips, kind, graph: SkeletonGraph) -> tuple[np.ndarray, np.ndarray]:
    """Batch ``(N, 3, T, V)`` and labels for equally long clips."""
    x = np.concatenate([derive_stream(c, kind, graph) for c in clips], axis=0)
    y = np.array([c.label for c in clips], dtype=np.int64)
    return x, y


# -- synthetic relational task -----------------------------------------------------

# Approximate standing pose for the 25-joint layout (meters; x right, y up).
NTU_REST_POSE = np.array([
    [0.00, 0.00, 0.00], [0.00, 0.28, 0.00], [0.00, 0.62, 0.00], [0.00, 0.78, 0.02],
    [-0.18, 0.52, 0.00], [-0.27, 0.27, 0.00], [-0.31, 0.04, 0.02], [-0.32, -0.04, 0.03],
    [0.18, 0.52, 0.00], [0.27, 0.27, 0.00], [0.31, 0.04, 0.02], [0.32, -0.04, 0.03],
    [-0.09, -0.03, 0.00], [-0.11, -0.45, 0.01], [-0.12, -0.85, 0.00], [-0.12, -0.90, 0.10],
    [0.09, -0.03, 0.00], [0.11, -0.45, 0.01], [0.12, -0.85, 0.00], [0.12, -0.90, 0.10],
    [0.00, 0.52, 0.00], [-0.33, -0.12, 0.04], [-0.29, -0.07, 0.06], [0.33, -0.12, 0.04],
    [0.29, -0.07, 0.06],
])


def rest_pose(graph: SkeletonGraph) -> np.ndarray:
    if graph.num_vertices == NTU_NUM_JOINTS:
        return NTU_REST_POSE.copy()
    # generic graphs: a fixed pose drawn from a graph-size seed, spaced by hop distance
    rng = np.random.default_rng(graph.num_vertices)
    dist = np.maximum(graph.center_distance, 0)
    return rng.normal(scale=0.1, size=(graph.num_vertices, 3)) + 0.15 * dist[:, None] * np.array([0.0, -1.0, 0.0])


def class_pairs(graph: SkeletonGraph, count: int) -> list[tuple[int, int]]:
    """``count`` distinct joint pairs, adjacent ones first, spread over the skeleton."""
    edges = sorted(graph.edges)
    if count <= len(edges):
        step = len(edges) / count
        return [edges[int(i * step)] for i in range(count)]
    V = graph.num_vertices
    others = sorted(((i, j) for i in range(V) for j in range(i + 1, V) if (i, j) not in graph.edges),
                    key=lambda p: (graph.hop_distance[p[0], p[1]], p))
    pairs = edges + others
    if count > len(pairs):
        raise ValueError(f"graph with {V} vertices cannot host {count} joint pairs")
    return pairs[:count]


@dataclass(frozen=True)
class SynthParams:
    amplitude: float = 0.08   # oscillation amplitude of the designated joints (m)
    sway: float = 0.05        # amplitude of the whole-body common motion (m)
    offset: float = 0.0       # std of the per-clip body position (m)
    noise: float = 0.005      # per-coordinate jitter (m)


def class_design(num_classes: int, graph: SkeletonGraph) -> list[tuple[tuple[int, int], bool]]:
    """Per class: the oscillating pair and whether the two joints move in anti-phase.

    Class ``c`` uses pair ``c % P`` and anti-phase iff ``c >= P``, with
    ``P = ceil(num_classes / 2)``, so classes ``c`` and ``c + P`` differ only
    in relative phase.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    P = -(-num_classes // 2)
    pairs = class_pairs(graph, P)
    return [(pairs[c % P], c >= P) for c in range(num_classes)]


def _unit(rng: np.random.Generator) -> np.ndarray:
    u = rng.normal(size=3)
    return u / np.linalg.norm(u)


def synth_clip(label: int, design, T: int, graph: SkeletonGraph, rng: np.random.Generator,
               params: SynthParams = SynthParams()) -> SkeletonClip:
    (a, b), anti = design[label]
    t = np.arange(T) / T
    pose = rest_pose(graph) * rng.uniform(0.9, 1.1)
    joints = np.broadcast_to(pose, (T, graph.num_vertices, 3)).copy()
    joints += rng.normal(scale=params.offset, size=3)
    sway = params.sway * rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t
                                                        + rng.uniform(0, 2 * np.pi))
    joints += sway[:, None, None] * _unit(rng)
    amp = params.amplitude * rng.uniform(0.7, 1.3)
    freq = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    u = _unit(rng)
    wave = amp * np.sin(2 * np.pi * freq * t + phase)
    joints[:, a] += wave[:, None] * u
    joints[:, b] += (-wave if anti else wave)[:, None] * u
    joints += rng.normal(scale=params.noise, size=joints.shape)
    return SkeletonClip(joints, label)


def synth_dataset(num_classes: int, clips_per_class: int, T: int, graph: SkeletonGraph, seed: int,
                  params: SynthParams = SynthParams()) -> list[SkeletonClip]:
    """Deterministic labeled clips whose classes differ only in inter-joint relative motion.

    Each clip carries a whole-body sway (plus a random body position when
    ``params.offset`` is nonzero; it defaults to 0) and, on one
    designated joint pair, a sinusoid with random frequency, phase and
    direction shared by both joints; the class fixes the pair and whether
    the second joint moves in phase or in anti-phase. Clips are ordered
    class by class.
    """
    design = class_design(num_classes, graph)
    rng = np.random.default_rng(seed)
    return [synth_clip(c, design, T, graph, rng, params)
            for c in range(num_classes) for _ in range(clips_per_class)]
