"""Estimator-style front end so the fusion head composes with sklearn tooling.

``TriStreamFusion`` follows the fit/predict idiom: hyperparameters in
``__init__`` (so ``get_params``/``set_params``/``clone`` work), ``fit``
on a training EmbeddingSet, then pairwise distances or retrieval reports
for (query, gallery) pairs of sets.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .distance import DistanceMatrix
from .evaluator import EvalProtocol, EvalReport, ablation_sweep, evaluate
from .fusion import WeightVector, decide_hard, decide_soft, fused_matrix
from .nn import LrSchedule
from .store import EmbeddingRecord, EmbeddingSet
from .trainer import PkSamplerConfig, TrainConfig, apply_adapters_to_set, train_fusion


class TriStreamFusion(BaseEstimator):
    """Trainable three-stream distance fusion with the decision-tree gating head."""

    def __init__(self, epochs: int = 50, freeze_epochs: int = 10, base_lr: float = 5e-6,
                 milestones: tuple[int, ...] = (20, 40), lr_gamma: float = 0.1,
                 weight_decay: float = 5e-4, margin: float = 0.3,
                 branch_temperature: float = 0.1, hidden_dim: int = 64,
                 p_identities: int = 4, k_per_identity: int = 8,
                 adapter_enabled: bool = False, seed: int = 0):
        self.epochs = epochs
        self.freeze_epochs = freeze_epochs
        self.base_lr = base_lr
        self.milestones = milestones
        self.lr_gamma = lr_gamma
        self.weight_decay = weight_decay
        self.margin = margin
        self.branch_temperature = branch_temperature
        self.hidden_dim = hidden_dim
        self.p_identities = p_identities
        self.k_per_identity = k_per_identity
        self.adapter_enabled = adapter_enabled
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            freeze_epochs=self.freeze_epochs,
            schedule=LrSchedule(self.base_lr, tuple(self.milestones), self.lr_gamma),
            weight_decay=self.weight_decay,
            margin=self.margin,
            branch_temperature=self.branch_temperature,
            adapter_enabled=self.adapter_enabled,
            seed=self.seed,
            sampler=PkSamplerConfig(self.p_identities, self.k_per_identity, self.seed),
            hidden_dim=self.hidden_dim,
        )

    def fit(self, train_set: EmbeddingSet, y=None) -> "TriStreamFusion":
        """Train on one embedding set; labels ride inside the records."""
        result = train_fusion(train_set, self._train_config())
        self.params_ = result.params
        self.history_ = result.history
        self.adapters_ = result.adapters
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before using the fusion head")

    def _prepared(self, eset: EmbeddingSet) -> EmbeddingSet:
        return apply_adapters_to_set(eset, self.adapters_)

    def pairwise_distances(self, query: EmbeddingSet, gallery: EmbeddingSet,
                           mode: str = "hard") -> DistanceMatrix:
        """Fused q x g distance matrix; hard mode is the inference path."""
        self._check_fitted()
        return fused_matrix(self.params_, self._prepared(query), self._prepared(gallery),
                            mode=mode)

    def decision_weights(self, q: EmbeddingRecord, g: EmbeddingRecord,
                         mode: str = "hard") -> WeightVector:
        self._check_fitted()
        if mode == "hard":
            return decide_hard(self.params_, q, g)[0]
        return decide_soft(self.params_, q, g)

    def evaluate(self, query: EmbeddingSet, gallery: EmbeddingSet,
                 protocol: EvalProtocol = EvalProtocol()) -> EvalReport:
        self._check_fitted()
        matrix = self.pairwise_distances(query, gallery)
        return evaluate(matrix, query, gallery, protocol)

    def ablation(self, query: EmbeddingSet, gallery: EmbeddingSet,
                 protocol: EvalProtocol = EvalProtocol()) -> dict[str, EvalReport]:
        self._check_fitted()
        return ablation_sweep(self._prepared(query), self._prepared(gallery),
                              self.params_, protocol)

    def score(self, query: EmbeddingSet, gallery: EmbeddingSet) -> float:
        """Rank-1 accuracy under the default protocol (sklearn-style score)."""
        return self.evaluate(query, gallery).rank1
