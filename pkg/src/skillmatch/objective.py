"""Symmetric in-batch-negative InfoNCE over match scores, plus the auxiliary
cosine-matrix tasks, proportional task sampling, and a two-pass gradient
caching step that reproduces full-batch gradients with bounded graph size."""

from __future__ import annotations

import enum
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ParameterSet, Tensor
from .matching import _row_norms, match_components, mean_pool_scores

Array = np.ndarray


class TaskKind(enum.Enum):
    SENTENCE_SKILL = "sentence_skill"
    DESCRIPTION_SKILL = "description_skill"
    SKILL_SYNONYM = "skill_synonym"


@dataclass(frozen=True)
class TrainingPair:
    sentence: str
    skill_id: str


def validate_score_matrix(values: Array, tolerance: float = 1e-9) -> None:
    """Check the (B, B) score-matrix invariants: square, finite, in [-1, 1]."""
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("score matrix contains non-finite entries")
    if values.size and (values.min() < -1.0 - tolerance or values.max() > 1.0 + tolerance):
        raise ValueError("score matrix entries must lie in [-1, 1]")


def infonce_terms(scores: Tensor, scale: float) -> tuple[Tensor, Tensor]:
    """Mean forward (rows vs. diagonal) and backward (columns vs. diagonal)
    cross-entropy terms of the symmetric objective."""
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    values = scores.values
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("score matrix contains non-finite entries")
    batch = values.shape[0]
    logits = ag.mul(scores, float(scale))
    diag_sum = ag.tensor_sum(ag.mul(logits, np.eye(batch)))
    forward = ag.mul(ag.sub(ag.tensor_sum(ag.logsumexp(logits, axis=1)), diag_sum),
                     1.0 / batch)
    backward = ag.mul(ag.sub(ag.tensor_sum(ag.logsumexp(logits, axis=0)), diag_sum),
                      1.0 / batch)
    return forward, backward


def symmetric_infonce(scores, scale: float, forward_only: bool = False) -> Tensor:
    """Contrastive loss over a (B, B) score matrix at the given scale.

    Row i's positive is column i; every other in-batch entry is a negative.
    The symmetric form averages the row-wise and column-wise cross-entropies;
    ``forward_only`` keeps just the row-wise term.
    """
    if not isinstance(scores, Tensor):
        scores = Tensor(np.asarray(scores, dtype=np.float64))
    forward, backward = infonce_terms(scores, scale)
    if forward_only:
        return forward
    return ag.mul(ag.add(forward, backward), 0.5)


def cosine_matrix(left: Sequence[Tensor], right: Sequence[Tensor]) -> Tensor:
    """(B, B) matrix of cosines between two lists of vectors: entry (i, k) is
    cos(left_i, right_k)."""
    lf = ag.stack(list(left), axis=0)
    rt = ag.stack(list(right), axis=0)
    ln = _row_norms(lf, "left vectors")
    rn = _row_norms(rt, "right vectors")
    return ag.clip(ag.div(ag.matmul(lf, rt.T), ag.mul(ln, rn.T)), -1.0, 1.0)


def context_score_matrix(sentences: Sequence[Tensor], skills: Sequence[Tensor]) -> Tensor:
    """(B, B) matrix of token-attention match scores: entry (i, k) matches
    sentence i against skill k."""
    skill_stack = ag.stack(list(skills), axis=0)
    rows = [match_components(sent, skill_stack)["scores"] for sent in sentences]
    return ag.stack(rows, axis=0)


def mean_pool_score_matrix(sentences: Sequence[Tensor], skills: Sequence[Tensor]) -> Tensor:
    """(B, B) matrix for the no-attention ablation: mean-pooled sentence cosines."""
    skill_stack = ag.stack(list(skills), axis=0)
    rows = [mean_pool_scores(sent, skill_stack) for sent in sentences]
    return ag.stack(rows, axis=0)


def description_task_scores(pairs: Sequence[tuple[str, str]], model) -> Tensor:
    """Score matrix for the skill/description auxiliary task: entry (i, k) is
    the cosine between mean-pooled skill i and mean-pooled description k."""
    skill_vecs = [model.skill_vector_node(skill) for skill, _ in pairs]
    desc_vecs = [model.skill_vector_node(desc) for _, desc in pairs]
    return cosine_matrix(skill_vecs, desc_vecs)


def sample_task(sizes: Mapping[TaskKind, int], rng: np.random.Generator) -> TaskKind:
    """Draw a task with probability proportional to its dataset size."""
    active = [(kind, size) for kind, size in sizes.items() if size > 0]
    if not active:
        raise ValueError("all task datasets are empty")
    total = sum(size for _, size in active)
    draw = rng.random() * total
    cumulative = 0
    for kind, size in active:
        cumulative += size
        if draw < cumulative:
            return kind
    return active[-1][0]


RepFn = Callable[[str], Tensor]
ScoreFn = Callable[[Sequence[Tensor], Sequence[Tensor]], Tensor]
LossFn = Callable[[Tensor], Tensor]


def direct_gradient_step(
    left_texts: Sequence[str],
    right_texts: Sequence[str],
    params: ParameterSet,
    rep_left: RepFn,
    rep_right: RepFn,
    score_fn: ScoreFn,
    loss_fn: LossFn,
) -> tuple[dict[str, Array], float]:
    """Single-pass reference: track the whole batch in one graph."""
    if len(left_texts) != len(right_texts):
        raise ValueError("left and right batches must have equal length")
    params.zero_grad()
    lefts: list[Tensor] = []
    rights: list[Tensor] = []
    for left_text, right_text in zip(left_texts, right_texts):
        lefts.append(rep_left(left_text))
        rights.append(rep_right(right_text))
    loss = loss_fn(score_fn(lefts, rights))
    loss.backward()
    grads = params.gradients()
    params.zero_grad()
    return grads, float(loss.values)


def cached_gradient_step(
    left_texts: Sequence[str],
    right_texts: Sequence[str],
    params: ParameterSet,
    rep_left: RepFn,
    rep_right: RepFn,
    score_fn: ScoreFn,
    loss_fn: LossFn,
    micro_batch_size: int,
) -> tuple[dict[str, Array], float]:
    """Two-pass gradient computation with representation caching.

    Pass one encodes the batch without tracking, scores it as a whole, and
    differentiates the loss down to the cached representations. Pass two
    re-encodes one micro-batch at a time with tracking and injects the cached
    representation gradients, so the peak tracked graph covers only a single
    micro-batch regardless of the batch size. A micro-batch size of at least
    the batch size degenerates to the direct computation.
    """
    if len(left_texts) != len(right_texts):
        raise ValueError("left and right batches must have equal length")
    if micro_batch_size < 1:
        raise ValueError("micro_batch_size must be at least 1")
    batch = len(left_texts)

    with ag.no_grad():
        left_values = [rep_left(t).values for t in left_texts]
        right_values = [rep_right(t).values for t in right_texts]
    left_leaves = [Tensor(v, requires_grad=True) for v in left_values]
    right_leaves = [Tensor(v, requires_grad=True) for v in right_values]
    loss = loss_fn(score_fn(left_leaves, right_leaves))
    loss.backward()
    left_grads = [leaf.grad for leaf in left_leaves]
    right_grads = [leaf.grad for leaf in right_leaves]

    totals: dict[str, Array] = {
        name: np.zeros_like(t.values) for name, t in params.items()
    }
    for start in range(0, batch, micro_batch_size):
        chunk = range(start, min(start + micro_batch_size, batch))
        params.zero_grad()
        pseudo: Tensor | None = None
        for i in chunk:
            for rep_fn, text, grad in (
                (rep_left, left_texts[i], left_grads[i]),
                (rep_right, right_texts[i], right_grads[i]),
            ):
                if grad is None:
                    continue
                term = ag.tensor_sum(ag.mul(rep_fn(text), grad))
                pseudo = term if pseudo is None else ag.add(pseudo, term)
        if pseudo is not None and pseudo.requires_grad:
            pseudo.backward()
            for name, grad in params.gradients().items():
                totals[name] += grad
    params.zero_grad()
    return totals, float(loss.values)
