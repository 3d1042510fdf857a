"""scikit-learn style wrapper around the training, masking and index modules."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_videos
from .bits import pack_rows
from .dataset import Dataset, Video, as_frames, sample_frame_set, stack_frame_sets, video_rng
from .evaluation import mean_ap, judge_results
from .index import PackedIndex, encode, search
from .mask import build_mask
from .model import Architecture, forward_batch
from .training import TrainConfig, train


class CategoryMaskHasher(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Learn binary video codes plus per-class bit masks.

    ``X`` is a sequence of ``(T_i, D)`` frame-feature matrices (or a 3-D array);
    ``y`` holds one label per video. Every video passed to :meth:`fit` needs at
    least ``2 * n_frames`` frames; later calls need ``n_frames``.

    Parameters mirror :class:`~maskhash.training.TrainConfig` and
    :class:`~maskhash.model.Architecture`; ``mask_ratio`` sets the fraction of
    bits each class keeps at retrieval time.

    Attributes
    ----------
    classes_ : ndarray of the original labels, indexed by encoded class id
    params_ : trained :class:`~maskhash.model.ModelParams`
    mask_ : :class:`~maskhash.mask.CategoryMask` at ``mask_ratio``
    loss_history_ : list of :class:`~maskhash.training.LossBreakdown`
    """

    def __init__(
        self,
        code_length=64,
        embed_dim=32,
        repr_dim=32,
        n_frames=5,
        alpha=1.0,
        beta=1.0,
        margin=2.0,
        learning_rate=1e-3,
        batch_size=16,
        iterations=2000,
        optimizer="adam(0.9,0.999,1e-8)",
        mask_ratio=1.0,
        random_state=0,
    ):
        self.code_length = code_length
        self.embed_dim = embed_dim
        self.repr_dim = repr_dim
        self.n_frames = n_frames
        self.alpha = alpha
        self.beta = beta
        self.margin = margin
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.iterations = iterations
        self.optimizer = optimizer
        self.mask_ratio = mask_ratio
        self.random_state = random_state

    def _dataset(self, videos, y):
        return Dataset(
            videos=tuple(
                Video(id=i, label=int(label), frames=as_frames(v))
                for i, (v, label) in enumerate(zip(videos, y))
            ),
            num_classes=len(self.classes_),
            feature_dim=self.n_features_in_,
        )

    def fit(self, X, y):
        videos = check_videos(X)
        y = np.asarray(y)
        if y.shape != (len(videos),):
            raise ValueError(f"y has shape {y.shape}, expected ({len(videos)},)")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.n_features_in_ = videos[0].shape[1]
        self.arch_ = Architecture(
            feature_dim=self.n_features_in_,
            embed_dim=self.embed_dim,
            repr_dim=self.repr_dim,
            code_length=self.code_length,
            num_classes=len(self.classes_),
            n_frames=self.n_frames,
        )
        config = TrainConfig(
            alpha=self.alpha,
            beta=self.beta,
            margin=self.margin,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.random_state,
            optimizer=self.optimizer,
        )
        self.params_, self.loss_history_ = train(self._dataset(videos, encoded), self.arch_, config)
        self.mask_ = build_mask(self.params_.cls_w, self.mask_ratio)
        return self

    def _frames(self, X):
        check_is_fitted(self, "params_")
        videos = check_videos(X, feature_dim=self.n_features_in_)
        sets = []
        for i, v in enumerate(videos):
            video = Video(id=i, label=0, frames=v)
            sets.append(sample_frame_set(video, self.n_frames, video_rng(self.random_state, i)))
        return stack_frame_sets(sets)

    def transform(self, X):
        """``(n_videos, code_length)`` uint8 binary codes."""
        bits, _ = encode(self.params_, self._frames(X))
        return bits

    def predict_proba(self, X):
        return forward_batch(self.params_, self._frames(X))["probs"]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def build_index(self, X, y):
        """Pack the codes of database videos ``X`` with labels ``y``."""
        labels = np.searchsorted(self.classes_, np.asarray(y))
        if np.any(self.classes_[np.minimum(labels, len(self.classes_) - 1)] != np.asarray(y)):
            raise ValueError("y contains labels not seen during fit")
        return PackedIndex(
            code_length=self.code_length,
            num_classes=len(self.classes_),
            video_ids=np.arange(len(labels), dtype=np.uint32),
            labels=labels.astype(np.uint32),
            codes=pack_rows(self.transform(X)),
            mask=self.mask_,
        )

    def kneighbors(self, X, index, n_neighbors=10):
        """Masked-Hamming neighbours of each video in ``X``.

        Returns ``(distances, indices)`` arrays of shape ``(n_queries, n)``
        where ``n = min(n_neighbors, len(index))``.
        """
        bits, predicted = encode(self.params_, self._frames(X))
        results = search(index.with_mask(self.mask_), pack_rows(bits), predicted, n_neighbors)
        distances = np.stack([r.distances for r in results])
        indices = np.stack([r.video_ids.astype(np.int64) for r in results])
        return distances, indices

    def retrieval_map(self, X_db, y_db, X_query, y_query):
        """mAP of Hamming ranking of ``X_db`` for each query video."""
        index = self.build_index(X_db, y_db)
        bits, predicted = encode(self.params_, self._frames(X_query))
        results = search(index, pack_rows(bits), predicted, len(index))
        query_labels = np.searchsorted(self.classes_, np.asarray(y_query))
        return mean_ap(judge_results(results, query_labels, index.labels))
