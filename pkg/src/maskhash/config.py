"""Run configuration for the command line.

The file is flat ``key=value`` text; ``#`` starts a comment. Keys::

    # architecture (feature_dim / num_classes default to the dataset's)
    embed_dim, repr_dim, code_length, n_frames, feature_dim, num_classes
    # training
    alpha, beta, margin, learning_rate, batch_size, iterations, seed, optimizer
    # dataset, synthetic source
    k_classes, videos_per_class, frames_per_video, class_sep, video_sep,
    frame_noise, data_seed
    # dataset, file source (query files are optional; without them the
    # dataset is split into train and query sets)
    features_path, labels_path, query_features_path, query_labels_path
    # split, masks, metrics
    train_fraction, ratio, ratios, map_top_n, max_n
"""

from dataclasses import dataclass
from pathlib import Path

from .dataset import N_FRAMES, generate_synthetic, load_dataset, split
from .errors import ConfigError
from .model import Architecture
from .training import TRAIN_CONFIG_KEYS, TrainConfig, read_key_values

SYNTHETIC_KEYS = (
    "k_classes",
    "videos_per_class",
    "frames_per_video",
    "class_sep",
    "video_sep",
    "frame_noise",
)
FILE_KEYS = ("features_path", "labels_path")
QUERY_FILE_KEYS = ("query_features_path", "query_labels_path")
ARCH_KEYS = ("embed_dim", "repr_dim", "code_length", "n_frames", "feature_dim", "num_classes")
OTHER_KEYS = ("data_seed", "train_fraction", "ratio", "ratios", "map_top_n", "max_n")
KNOWN_KEYS = frozenset(
    SYNTHETIC_KEYS + FILE_KEYS + QUERY_FILE_KEYS + ARCH_KEYS + OTHER_KEYS + TRAIN_CONFIG_KEYS
)
DEFAULT_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 11))
INT_KEYS = frozenset(
    ("k_classes", "videos_per_class", "frames_per_video", "data_seed", "map_top_n", "max_n")
    + ARCH_KEYS
)


def _convert(key, raw):
    try:
        if key in INT_KEYS:
            return int(raw)
        if key == "ratios":
            return tuple(float(x) for x in raw.replace(" ", "").split(",") if x)
        if key in QUERY_FILE_KEYS or key in FILE_KEYS:
            return raw.strip()
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


@dataclass
class RunConfig:
    values: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_file(cls, path, seed=None):
        raw = read_key_values(path)
        unknown = sorted(set(raw) - KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
        values = {k: v.strip() for k, v in raw.items()}
        if seed is not None:
            values["seed"] = str(seed)
        return cls(values=values, base_dir=Path(path).resolve().parent)

    @classmethod
    def empty(cls, seed=None):
        return cls(values={} if seed is None else {"seed": str(seed)})

    def has(self, key):
        return key in self.values

    def get(self, key, default=None, required=False):
        if key not in self.values:
            if required:
                raise ConfigError(f"missing config key {key}")
            return default
        return _convert(key, self.values[key])

    def path(self, key):
        p = Path(self.get(key, required=True))
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self):
        return self.train_config().seed

    @property
    def data_seed(self):
        return self.get("data_seed", self.seed)

    def train_config(self):
        return TrainConfig.from_mapping(self.values)

    def architecture(self, feature_dim, num_classes):
        for key, actual in (("feature_dim", feature_dim), ("num_classes", num_classes)):
            declared = self.get(key)
            if declared is not None and declared != actual:
                raise ConfigError(f"{key}={declared} in config but the dataset has {actual}")
        return Architecture(
            feature_dim=feature_dim,
            embed_dim=self.get("embed_dim", 32),
            repr_dim=self.get("repr_dim", 32),
            code_length=self.get("code_length", required=True),
            num_classes=num_classes,
            n_frames=self.n_frames,
        )

    @property
    def n_frames(self):
        return self.get("n_frames", N_FRAMES)

    def source(self):
        """``"synthetic"`` or ``"files"``; exactly one must be configured."""
        synthetic = [k for k in SYNTHETIC_KEYS if self.has(k)]
        files = [k for k in FILE_KEYS if self.has(k)]
        if synthetic and files:
            raise ConfigError("configure either synthetic keys or features_path/labels_path, not both")
        if files:
            for k in FILE_KEYS:
                self.get(k, required=True)
            return "files"
        for k in SYNTHETIC_KEYS + ("feature_dim",):
            self.get(k, required=True)
        return "synthetic"

    def synthetic_dataset(self):
        if self.source() != "synthetic":
            raise ConfigError("gen needs a synthetic dataset source (k_classes, ...)")
        return generate_synthetic(
            k_classes=self.get("k_classes"),
            videos_per_class=self.get("videos_per_class"),
            frames_per_video=self.get("frames_per_video"),
            feature_dim=self.get("feature_dim"),
            class_sep=self.get("class_sep"),
            video_sep=self.get("video_sep"),
            frame_noise=self.get("frame_noise"),
            seed=self.data_seed,
            n_frames=self.n_frames,
        )

    def datasets(self):
        """``(train, query)`` datasets from whichever source is configured."""
        if self.source() == "synthetic":
            full = self.synthetic_dataset()
        else:
            full = load_dataset(self.path("features_path"), self.path("labels_path"))
            if any(self.has(k) for k in QUERY_FILE_KEYS):
                query = load_dataset(
                    self.path("query_features_path"), self.path("query_labels_path")
                )
                return full, query
        return split(full, self.get("train_fraction", 5.0 / 6.0), self.data_seed)

    def ratios(self):
        return self.get("ratios", DEFAULT_RATIOS)
