"""Label-dependent token-level attention matching between a sentence and a skill.

The match score is an attention-weighted average of per-token cosine
similarities: raw dot products between token rows and the skill vector are
softmax-normalized into weights, which then mix the per-token cosines. A
mean-pooled cosine variant is kept as the ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import DomainError, Tensor
from .encoder import TokenEmbeddings

_NORM_FLOOR = ag.EPSILON_NORM


@dataclass(frozen=True)
class MatchResult:
    """Score plus the per-token quantities behind it, for one (sentence, skill) pair."""

    score: float
    alpha: np.ndarray
    token_cosines: np.ndarray
    token_dots: np.ndarray
    template_mask: np.ndarray

    def __post_init__(self):
        n = len(self.alpha)
        if not (len(self.token_cosines) == len(self.token_dots) == len(self.template_mask) == n):
            raise ValueError("per-token sequences must have equal length")


def _row_norms(x: Tensor, label: str) -> Tensor:
    norms_sq = ag.tensor_sum(ag.mul(x, x), axis=1, keepdims=True)
    if float(norms_sq.values.min()) < _NORM_FLOOR**2:
        raise DomainError(f"{label} contains a (near-)zero-norm vector")
    return ag.sqrt(norms_sq)


def match_components(sentence: Tensor, skills: Tensor) -> dict[str, Tensor]:
    """All match quantities between one sentence and a stack of skill vectors.

    ``sentence`` is (T, d), ``skills`` is (S, d). Returns dots, cosines and
    attention weights of shape (T, S) and scores of shape (S,), all
    differentiable w.r.t. both inputs. Attention runs over every token,
    template positions included.
    """
    if sentence.values.ndim != 2 or skills.values.ndim != 2:
        raise DomainError("sentence and skills must be 2-D")
    if sentence.values.shape[1] != skills.values.shape[1]:
        raise DomainError(
            f"dimension mismatch: sentence d={sentence.values.shape[1]}, "
            f"skills d={skills.values.shape[1]}"
        )
    if sentence.values.shape[0] == 0:
        raise DomainError("sentence has no tokens")
    token_norms = _row_norms(sentence, "sentence")
    skill_norms = _row_norms(skills, "skills")
    dots = ag.matmul(sentence, skills.T)
    cosines = ag.clip(ag.div(dots, ag.mul(token_norms, skill_norms.T)), -1.0, 1.0)
    alpha = ag.softmax(dots, axis=0)
    scores = ag.tensor_sum(ag.mul(alpha, cosines), axis=0)
    return {"dots": dots, "cosines": cosines, "alpha": alpha, "scores": scores}


def context_match_score(sentence: Tensor, skill: Tensor) -> Tensor:
    """Differentiable scalar match score for a single skill vector (d,)."""
    parts = match_components(sentence, ag.reshape(skill, (1, -1)))
    return ag.reshape(parts["scores"], ())


def context_match(sentence: TokenEmbeddings, skill_vector: np.ndarray) -> MatchResult:
    """Score one sentence against one skill, keeping per-token evidence."""
    skill_vector = np.asarray(skill_vector, dtype=np.float64)
    if skill_vector.ndim != 1:
        raise DomainError("skill vector must be 1-D")
    with ag.no_grad():
        parts = match_components(
            Tensor(sentence.matrix), Tensor(skill_vector.reshape(1, -1))
        )
    return MatchResult(
        score=float(parts["scores"].values[0]),
        alpha=parts["alpha"].values[:, 0].copy(),
        token_cosines=parts["cosines"].values[:, 0].copy(),
        token_dots=parts["dots"].values[:, 0].copy(),
        template_mask=sentence.template_mask.copy(),
    )


def match_all(sentence: TokenEmbeddings, skill_matrix: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorized ranking pass: one sentence against every row of (S, d)."""
    with ag.no_grad():
        parts = match_components(Tensor(sentence.matrix), Tensor(skill_matrix))
    return {name: t.values for name, t in parts.items()}


def mean_pool_scores(sentence: Tensor, skills: Tensor) -> Tensor:
    """Ablation scorer: cosine between the mean-pooled sentence and each skill."""
    pooled = ag.reshape(ag.mean(sentence, axis=0), (1, -1))
    pooled_norm = _row_norms(pooled, "mean-pooled sentence")
    skill_norms = _row_norms(skills, "skills")
    cos = ag.div(ag.matmul(pooled, skills.T), ag.mul(pooled_norm, skill_norms.T))
    return ag.reshape(ag.clip(cos, -1.0, 1.0), (-1,))


def mean_pool_match(sentence: TokenEmbeddings, skill_vector: np.ndarray) -> float:
    skill_vector = np.asarray(skill_vector, dtype=np.float64)
    with ag.no_grad():
        scores = mean_pool_scores(Tensor(sentence.matrix), Tensor(skill_vector.reshape(1, -1)))
    return float(scores.values[0])
