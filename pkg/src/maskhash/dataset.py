"""Video feature datasets: synthesis, file I/O, splitting and frame sampling.

A video is a ``(T, D)`` matrix of per-frame feature vectors. Training and
retrieval never see a whole video; they see *frame sets* of ``N`` frames picked
at a fixed stride, and training additionally uses *intra-pairs*, two frame sets
from the same video with no frame in common.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_int, check_random_state, check_real
from .errors import ConfigError, FormatError, SamplingError, SplitError

N_FRAMES = 5
FEATURE_MAGIC = b"MHF1"
# Resampling attempts for the second frame set before the complement fallback.
MAX_PAIR_RETRIES = 16


@dataclass(frozen=True, eq=False)
class Video:
    id: int
    label: int
    frames: np.ndarray

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class FrameSet:
    video_id: int
    frame_indices: tuple
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class IntraPair:
    a: FrameSet
    b: FrameSet
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    videos: tuple
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        if self.num_classes < 2:
            raise FormatError(f"a dataset needs at least 2 classes, got {self.num_classes}")
        for v in self.videos:
            if not 0 <= v.label < self.num_classes:
                raise FormatError(
                    f"video {v.id}: label {v.label} outside [0, {self.num_classes})"
                )
            if v.frames.ndim != 2 or v.frames.shape[1] != self.feature_dim:
                raise FormatError(
                    f"video {v.id}: frame matrix shape {v.frames.shape} does not match "
                    f"feature_dim {self.feature_dim}"
                )

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    def __getitem__(self, i):
        return self.videos[i]

    @property
    def labels(self):
        return np.array([v.label for v in self.videos], dtype=np.int64)

    @property
    def ids(self):
        return np.array([v.id for v in self.videos], dtype=np.int64)

    def by_id(self, video_id):
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    def equals(self, other):
        """Bit-exact comparison of ids, labels and frame values."""
        if (
            self.num_classes != other.num_classes
            or self.feature_dim != other.feature_dim
            or len(self) != len(other)
        ):
            return False
        for a, b in zip(self.videos, other.videos):
            if a.id != b.id or a.label != b.label:
                return False
            if a.frames.shape != b.frames.shape or a.frames.dtype != b.frames.dtype:
                return False
            if a.frames.tobytes() != b.frames.tobytes():
                return False
        return True


def as_frames(a):
    a = np.ascontiguousarray(a, dtype=np.float32)
    a.flags.writeable = False
    return a


def generate_synthetic(
    k_classes,
    videos_per_class,
    frames_per_video,
    feature_dim,
    class_sep,
    video_sep,
    frame_noise,
    seed,
    n_frames=None,
):
    """Draw a three-level (class -> video -> frame) Gaussian dataset.

    Class prototypes are ``class_sep * N(0, I)``; each video offsets its class
    prototype by ``video_sep * N(0, I)``; each frame adds ``frame_noise * N(0, I)``
    to its video prototype. Videos are stored in a seeded random order with ids
    equal to their position. Frames are float32 so the dataset survives a save
    and load unchanged.

    If ``n_frames`` is given, ``frames_per_video`` must admit an intra-pair of
    that size.
    """
    k_classes = check_int(k_classes, "k_classes", 2)
    videos_per_class = check_int(videos_per_class, "videos_per_class", 1)
    frames_per_video = check_int(frames_per_video, "frames_per_video", 1)
    feature_dim = check_int(feature_dim, "feature_dim", 1)
    class_sep = check_real(class_sep, "class_sep", 0.0)
    video_sep = check_real(video_sep, "video_sep", 0.0)
    frame_noise = check_real(frame_noise, "frame_noise", 0.0)
    if not class_sep > video_sep > frame_noise:
        raise ConfigError(
            "scales must satisfy class_sep > video_sep > frame_noise >= 0, got "
            f"{class_sep}, {video_sep}, {frame_noise}"
        )
    if n_frames is not None and frames_per_video < 2 * n_frames:
        raise ConfigError(
            f"frames_per_video={frames_per_video} cannot hold two disjoint sets of {n_frames}"
        )

    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((k_classes, feature_dim)) * class_sep
    labels, frames = [], []
    for k in range(k_classes):
        for _ in range(videos_per_class):
            center = prototypes[k] + rng.standard_normal(feature_dim) * video_sep
            noise = rng.standard_normal((frames_per_video, feature_dim)) * frame_noise
            labels.append(k)
            frames.append(center + noise)
    order = rng.permutation(len(labels))
    videos = tuple(
        Video(id=i, label=labels[j], frames=as_frames(frames[j])) for i, j in enumerate(order)
    )
    return Dataset(videos=videos, num_classes=k_classes, feature_dim=feature_dim)


def save_dataset(dataset, features_path, labels_path):
    """Write the binary feature file and the text label file."""
    with open(features_path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", len(dataset), dataset.feature_dim))
        for v in dataset.videos:
            fh.write(struct.pack("<I", v.num_frames))
            fh.write(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())
    Path(labels_path).write_text("".join(f"{v.label}\n" for v in dataset.videos))


def _read_labels(labels_path):
    lines = Path(labels_path).read_text().splitlines()
    # a single trailing blank line is tolerated, nothing else
    if lines and lines[-1].strip() == "":
        lines = lines[:-1]
    if not lines:
        raise FormatError(f"{labels_path}: label file is empty")
    labels = []
    for i, line in enumerate(lines):
        text = line.strip()
        if not text.isdigit():
            raise FormatError(f"{labels_path}: line {i + 1} (video {i}): bad label {line!r}")
        labels.append(int(text))
    return labels


def load_dataset(features_path, labels_path):
    """Read a dataset written by :func:`save_dataset`.

    The number of classes is one more than the largest label.
    """
    data = Path(features_path).read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{features_path}: missing or bad header (magic {data[:4]!r})")
    num_videos, dim = struct.unpack_from("<II", data, 4)
    if dim == 0:
        raise FormatError(f"{features_path}: header declares feature_dim 0")
    labels = _read_labels(labels_path)
    if len(labels) != num_videos:
        raise FormatError(
            f"{labels_path}: {len(labels)} labels for {num_videos} videos in {features_path}"
        )

    offset = 12
    videos = []
    for i in range(num_videos):
        if offset + 4 > len(data):
            raise FormatError(f"{features_path}: video {i}: truncated before frame count "
                              f"(offset {offset})")
        (t,) = struct.unpack_from("<I", data, offset)
        offset += 4
        nbytes = 4 * t * dim
        if offset + nbytes > len(data):
            raise FormatError(
                f"{features_path}: video {i}: expected {t}x{dim} floats, file ends at "
                f"offset {len(data)} (needed {offset + nbytes})"
            )
        frames = np.frombuffer(data, dtype="<f4", count=t * dim, offset=offset)
        offset += nbytes
        videos.append(Video(id=i, label=labels[i], frames=as_frames(frames.reshape(t, dim))))
    if offset != len(data):
        raise FormatError(
            f"{features_path}: {len(data) - offset} trailing bytes after video {num_videos - 1}; "
            f"frame rows do not match feature_dim {dim}"
        )
    return Dataset(videos=tuple(videos), num_classes=max(labels) + 1, feature_dim=dim)


def sample_frame_set(video, n_frames, rng):
    """Pick ``n_frames`` frames at stride ``T // n_frames`` from a random offset."""
    t = video.num_frames
    if n_frames < 1 or t < n_frames:
        raise SamplingError(f"video {video.id}: cannot take {n_frames} frames from {t}")
    stride = t // n_frames
    offset = int(rng.integers(0, t - stride * (n_frames - 1)))
    indices = tuple(range(offset, offset + stride * n_frames, stride))
    return _frame_set(video, indices)


def _frame_set(video, indices):
    return FrameSet(
        video_id=video.id,
        frame_indices=tuple(int(i) for i in indices),
        features=video.frames[list(indices)],
    )


def sample_intra_pair(video, n_frames, rng):
    """Two frame sets from ``video`` with disjoint frame indices.

    Both sets use independent offsets. The second set is redrawn up to
    ``MAX_PAIR_RETRIES`` times; if it still overlaps the first, its indices are
    drawn uniformly without replacement from the frames the first set left out.
    """
    t = video.num_frames
    if t < 2 * n_frames:
        raise SamplingError(
            f"video {video.id}: {t} frames cannot hold two disjoint sets of {n_frames}"
        )
    a = sample_frame_set(video, n_frames, rng)
    taken = set(a.frame_indices)
    for _ in range(MAX_PAIR_RETRIES):
        b = sample_frame_set(video, n_frames, rng)
        if taken.isdisjoint(b.frame_indices):
            return IntraPair(a=a, b=b, label=video.label)
    free = np.array([i for i in range(t) if i not in taken])
    picked = np.sort(rng.choice(free, size=n_frames, replace=False))
    return IntraPair(a=a, b=_frame_set(video, picked), label=video.label)


def split(dataset, train_fraction, seed):
    """Stratified train/test split.

    Each class contributes ``round(train_fraction * count)`` videos to the train
    side, clipped so both sides keep at least one. Videos keep their ids and
    their relative order.
    """
    train_fraction = check_real(train_fraction, "train_fraction")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    in_train = np.zeros(len(dataset), dtype=bool)
    for k in range(dataset.num_classes):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            continue
        if members.size < 2:
            raise SplitError(f"class {k} has {members.size} video(s); at least 2 are needed")
        n_train = math.floor(train_fraction * members.size + 0.5)
        n_train = min(max(n_train, 1), members.size - 1)
        in_train[rng.permutation(members)[:n_train]] = True

    def subset(mask):
        return Dataset(
            videos=tuple(v for v, keep in zip(dataset.videos, mask) if keep),
            num_classes=dataset.num_classes,
            feature_dim=dataset.feature_dim,
        )

    return subset(in_train), subset(~in_train)


def stack_frame_sets(frame_sets):
    """``(B, N, D)`` float64 array of the features of ``frame_sets``."""
    return np.stack([np.asarray(fs.features, dtype=np.float64) for fs in frame_sets])


def video_rng(seed, video_id):
    """Per-video generator, so a video's frame set does not depend on its position."""
    return check_random_state([int(seed), int(video_id)])
