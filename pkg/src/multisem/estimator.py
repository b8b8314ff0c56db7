"""scikit-learn style front end for episodic meta-training.

``fit`` consumes a :class:`~multisem.data.FewShotDataset` (it samples its own
training episodes); ``predict``/``predict_proba``/``score`` take a single
:class:`~multisem.data.Episode`.
"""

from __future__ import annotations

from typing import List

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import fusion
from .data import Episode, FewShotDataset, sample_episode
from .errors import ConfigurationError
from .neural import INFER, TRAIN, Adam
from .numeric import Rng, derive_seed


def check_episode(episode: Episode, model: fusion.FusionModel) -> Episode:
    """Validate an episode against a model's input dimensions."""
    support = np.asarray(episode.support)
    query = np.asarray(episode.query)
    if support.ndim != 3 or support.shape[0] < 2 or support.shape[1] < 1:
        raise ConfigurationError(f"support must be (way >= 2, shot >= 1, dim), got {support.shape}")
    if query.ndim != 2 or query.shape[1] != support.shape[2]:
        raise ConfigurationError(f"query must be (n, {support.shape[2]}), got {query.shape}")
    if support.shape[2] != model.visual_dim:
        raise ConfigurationError(f"features have dim {support.shape[2]}, model expects {model.visual_dim}")
    if not (np.all(np.isfinite(support)) and np.all(np.isfinite(query))):
        raise ConfigurationError("episode features contain non-finite values")
    for m, d in model.semantic_dims.items():
        s = episode.semantics.get(m)
        if s is None or np.shape(s) != (support.shape[0], d):
            raise ConfigurationError(f"episode needs {m!r} vectors of shape {(support.shape[0], d)}")
    return episode


def check_dataset(dataset: FewShotDataset, config: fusion.BranchConfig) -> None:
    missing = [m for m in config.semantic_modalities if m not in dataset.semantics]
    if missing:
        raise ConfigurationError(
            f"branches {config.text!r} need modalities {missing}; dataset has {sorted(dataset.semantics)}")


class MultiSemanticProtoNet(BaseEstimator):
    """Prototype classifier fusing visual and semantic prototypes.

    Parameters
    ----------
    branches : str
        Branch grammar, e.g. ``"l/l,d/v,d/l"``; empty for visual only.
    branch_losses : bool
        Supervise every partial prototype, not just the final one.
    way, shot, query : int
        Training episode shape.
    train_episodes : int
        Number of optimizer steps (one episode each).
    lr, beta1, beta2, eps : float
        Adam constants.
    embed_dim, visual_hidden, semantic_hidden, attention_hidden : int
        Layer widths.
    dropout : float
        Dropout rate of semantic and attention MLPs.
    visual_dropout : float
        Dropout rate of the visual head.
    init_std : float
        Standard deviation of the normal weight initialisation.
    seed : int
        Base seed; initialisation, episode sampling and dropout use
        independent streams derived from it.
    """

    def __init__(self, branches: str = "", branch_losses: bool = True, way: int = 5,
                 shot: int = 1, query: int = 15, train_episodes: int = 1000,
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, embed_dim: int = 512, visual_hidden: int = 512,
                 semantic_hidden: int = 300, attention_hidden: int = 300,
                 dropout: float = 0.7, visual_dropout: float = 0.0,
                 init_std: float = 0.02, seed: int = 0):
        self.branches = branches
        self.branch_losses = branch_losses
        self.way = way
        self.shot = shot
        self.query = query
        self.train_episodes = train_episodes
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.embed_dim = embed_dim
        self.visual_hidden = visual_hidden
        self.semantic_hidden = semantic_hidden
        self.attention_hidden = attention_hidden
        self.dropout = dropout
        self.visual_dropout = visual_dropout
        self.init_std = init_std
        self.seed = seed

    def _validate_params(self):
        if self.way < 2 or self.shot < 1 or self.query < 1:
            raise ConfigurationError("need way >= 2, shot >= 1, query >= 1")
        if self.train_episodes < 0:
            raise ConfigurationError("train_episodes must be >= 0")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        return fusion.parse_branch_config(self.branches, bool(self.branch_losses))

    def init_model(self, dataset: FewShotDataset) -> fusion.FusionModel:
        config = self._validate_params()
        check_dataset(dataset, config)
        return fusion.init_fusion_model(
            Rng(derive_seed(self.seed, "init")), config, dataset.feature_dim,
            dataset.semantic_dims, self.embed_dim, self.visual_hidden,
            self.semantic_hidden, self.attention_hidden, self.dropout,
            self.visual_dropout, self.init_std)

    def fit(self, dataset: FewShotDataset, y=None, split: str = "train"):
        model = self.init_model(dataset)
        optimizer = Adam(self.lr, self.beta1, self.beta2, self.eps)
        episodes = Rng(derive_seed(self.seed, "train-episodes"))
        masks = Rng(derive_seed(self.seed, "dropout"))
        params = model.parameters()
        trace: List[float] = []
        for _ in range(self.train_episodes):
            ep = sample_episode(episodes, dataset, split, self.way, self.shot, self.query)
            loss, grads = fusion.episode_loss_and_grads(model, ep, masks, TRAIN)
            optimizer.step(params, grads)
            trace.append(loss)
        self.model_ = model
        self.optimizer_ = optimizer
        self.loss_trace_ = np.asarray(trace)
        return self

    @classmethod
    def from_model(cls, model: fusion.FusionModel, **params) -> "MultiSemanticProtoNet":
        """Wrap an already trained model (e.g. from a checkpoint)."""
        params.setdefault("branches", model.config.text)
        params.setdefault("branch_losses", model.config.branch_losses)
        params.setdefault("embed_dim", model.embed_dim)
        est = cls(**params)
        est.model_ = model
        est.loss_trace_ = np.zeros(0)
        return est

    def predict(self, episode: Episode) -> np.ndarray:
        check_is_fitted(self, "model_")
        return fusion.predict(self.model_, check_episode(episode, self.model_))

    def predict_proba(self, episode: Episode) -> np.ndarray:
        check_is_fitted(self, "model_")
        return fusion.predict_proba(self.model_, check_episode(episode, self.model_))

    def score(self, episode: Episode, y=None) -> float:
        """Query accuracy on one episode."""
        y = episode.query_labels if y is None else np.asarray(y)
        return float(np.mean(self.predict(episode) == y))

    def episode_forward(self, episode: Episode) -> fusion.EpisodeForward:
        check_is_fitted(self, "model_")
        return fusion.forward_episode(self.model_, check_episode(episode, self.model_), INFER)

    def loss(self, episode: Episode) -> float:
        check_is_fitted(self, "model_")
        return fusion.episode_loss(self.model_, check_episode(episode, self.model_), INFER)
