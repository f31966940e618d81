"""Inference pipeline: rank a taxonomy against a sentence, threshold, prune
redundant labels by token-level dot products, and render attention heatmaps."""

from __future__ import annotations

import html as html_lib
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .autograd import DomainError
from .encoder import Model
from .evaluation import AnnotatedAd, corpus_cluster_prf, corpus_redundancy, scored_sentences
from .matching import MatchResult, context_match, match_all


@dataclass(frozen=True)
class Skill:
    """One taxonomy entry: stable id, preferred name, optional metadata."""

    id: str
    name: str
    description: str | None = None
    synonyms: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("skill id must be non-empty")
        if not self.name:
            raise ValueError(f"skill {self.id!r} has an empty name")


class Taxonomy:
    """The closed label universe ranked at inference time."""

    def __init__(self, skills: Sequence[Skill]):
        self.skills: tuple[Skill, ...] = tuple(skills)
        self._by_id: dict[str, Skill] = {}
        for skill in self.skills:
            if skill.id in self._by_id:
                raise ValueError(f"duplicate skill id: {skill.id!r}")
            self._by_id[skill.id] = skill

    def __len__(self) -> int:
        return len(self.skills)

    def __iter__(self):
        return iter(self.skills)

    def __contains__(self, skill_id: str) -> bool:
        return skill_id in self._by_id

    def get(self, skill_id: str) -> Skill:
        return self._by_id[skill_id]

    def ids(self) -> list[str]:
        return [s.id for s in self.skills]

    def cache_key(self) -> tuple:
        return tuple((s.id, s.name) for s in self.skills)


@dataclass(frozen=True)
class RankedPrediction:
    """A skill with its match score and the per-token evidence behind it."""

    skill_id: str
    score: float
    match: MatchResult


@dataclass(frozen=True)
class ExtractionConfig:
    """Decision threshold on the raw match score, plus the filter switch."""

    tau: float = 0.5
    use_filter: bool = True

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")


def _resolve_model(model_or_checkpoint) -> Model:
    return getattr(model_or_checkpoint, "model", model_or_checkpoint)


def skill_matrix(model: Model, taxonomy: Taxonomy) -> np.ndarray:
    """Stacked skill vectors (one row per taxonomy skill), memoized per
    parameter state so ranking a corpus encodes each skill once."""
    key = (taxonomy.cache_key(), model.params.mutation_count)
    cached = model._skill_matrix_cache.get(key)
    if cached is None:
        cached = np.stack([model.skill_vector(s.name) for s in taxonomy.skills])
        model._skill_matrix_cache.clear()
        model._skill_matrix_cache[key] = cached
    return cached


def rank_skills(sentence: str, taxonomy: Taxonomy, model) -> list[RankedPrediction]:
    """Every taxonomy skill scored against the sentence, sorted by descending
    score with ties broken by ascending skill id."""
    if len(taxonomy) == 0:
        raise ValueError("taxonomy is empty")
    model = _resolve_model(model)
    embeddings = model.token_embeddings(sentence)
    parts = match_all(embeddings, skill_matrix(model, taxonomy))
    entries = []
    for column, skill in enumerate(taxonomy.skills):
        result = MatchResult(
            score=float(parts["scores"][column]),
            alpha=parts["alpha"][:, column].copy(),
            token_cosines=parts["cosines"][:, column].copy(),
            token_dots=parts["dots"][:, column].copy(),
            template_mask=embeddings.template_mask.copy(),
        )
        entries.append(RankedPrediction(skill.id, result.score, result))
    entries.sort(key=lambda p: (-p.score, p.skill_id))
    return entries


def redundancy_filter(candidates: Sequence[RankedPrediction]) -> list[RankedPrediction]:
    """Keep only candidates that win the dot product at some non-template token.

    A token's winner is the candidate with the strictly highest dot product
    there; exact ties go to the lexicographically smallest skill id. Input
    order (descending score) is preserved.
    """
    if not candidates:
        return []
    mask = candidates[0].match.template_mask
    content = [j for j in range(len(mask)) if not mask[j]]
    if not content:
        raise DomainError("sentence has no non-template tokens")
    winners: set[str] = set()
    for j in content:
        best_id = candidates[0].skill_id
        best_dot = candidates[0].match.token_dots[j]
        for candidate in candidates[1:]:
            dot = candidate.match.token_dots[j]
            if dot > best_dot or (dot == best_dot and candidate.skill_id < best_id):
                best_id = candidate.skill_id
                best_dot = dot
        winners.add(best_id)
    return [c for c in candidates if c.skill_id in winners]


def extract(
    sentence: str,
    taxonomy: Taxonomy,
    model,
    config: ExtractionConfig,
) -> list[RankedPrediction]:
    """Threshold the ranked list at tau, then apply the redundancy filter."""
    candidates = [
        p for p in rank_skills(sentence, taxonomy, model) if p.score >= config.tau
    ]
    if config.use_filter and candidates:
        candidates = redundancy_filter(candidates)
    return candidates


@dataclass(frozen=True)
class CalibrationRow:
    tau: float
    precision: float
    recall: float
    f1: float
    redundancy: float


@dataclass(frozen=True)
class CalibrationResult:
    tau: float
    f1: float
    redundancy: float
    rows: tuple[CalibrationRow, ...]


def threshold_grid(start: float = 0.0, stop: float = 1.0, step: float = 0.01) -> list[float]:
    count = int(round((stop - start) / step))
    return [start + i * step for i in range(count + 1)]


def calibrate_threshold(
    dev_ads: Sequence[AnnotatedAd],
    taxonomy: Taxonomy,
    model,
    use_filter: bool = True,
    grid: Sequence[float] | None = None,
) -> CalibrationResult:
    """Grid-search the threshold for maximal corpus F1 on the dev annotations.

    Ties are broken toward the larger threshold (fewer predictions). Also
    reports the prediction redundancy at every grid point.
    """
    sentences = scored_sentences(dev_ads)
    if not sentences:
        raise ValueError("dev annotations contain no scored sentences")
    model = _resolve_model(model)
    ranked = [rank_skills(s.text, taxonomy, model) for s in sentences]
    grid = threshold_grid() if grid is None else list(grid)

    rows = []
    best: CalibrationRow | None = None
    for tau in grid:
        items = []
        for predictions, sentence in zip(ranked, sentences):
            kept = [p for p in predictions if p.score >= tau]
            if use_filter and kept:
                kept = redundancy_filter(kept)
            items.append(({p.skill_id for p in kept}, sentence.clusters))
        prf = corpus_cluster_prf(items)
        row = CalibrationRow(
            tau=tau,
            precision=prf.precision,
            recall=prf.recall,
            f1=prf.f1,
            redundancy=corpus_redundancy(items),
        )
        rows.append(row)
        if best is None or row.f1 >= best.f1:
            best = row
    return CalibrationResult(
        tau=best.tau, f1=best.f1, redundancy=best.redundancy, rows=tuple(rows)
    )


# -- attention heatmaps -------------------------------------------------------


def _content_weights(result: MatchResult) -> tuple[list[str], list[float], list[float]]:
    """Non-template surfaces are supplied separately; here we renormalize the
    attention over non-template positions and scale to max intensity 1."""
    keep = [j for j in range(len(result.template_mask)) if not result.template_mask[j]]
    weights = [float(result.alpha[j]) for j in keep]
    total = sum(weights)
    weights = [w / total for w in weights]
    top = max(weights)
    intensities = [w / top for w in weights]
    return keep, weights, intensities


def explain(
    sentence: str,
    skill: Skill,
    model,
    fmt: str = "ansi",
) -> str:
    """Render the per-token attention of a (sentence, skill) match.

    Background intensity is linearly proportional to the attention weight,
    normalized so the strongest token has full intensity. Attention is shown
    for content tokens only, renormalized to sum to one over them. The HTML
    output is self-contained and embeds the numeric weights as attributes.
    """
    model = _resolve_model(model)
    embeddings = model.token_embeddings(sentence)
    result = context_match(embeddings, model.skill_vector(skill.name))
    keep, weights, intensities = _content_weights(result)
    tokens = [embeddings.surfaces[j] for j in keep]

    if fmt == "ansi":
        cells = []
        for token, intensity in zip(tokens, intensities):
            fade = round(255 * (1.0 - intensity))
            cells.append(f"\x1b[48;2;255;{fade};{fade}m{token}\x1b[0m")
        header = f"{skill.name} (score {result.score:.6f})\n"
        return header + " ".join(cells) + "\n"

    if fmt == "html":
        spans = []
        for token, weight, intensity in zip(tokens, weights, intensities):
            spans.append(
                f'<span class="tok" data-alpha="{weight!r}" '
                f'style="background-color: rgba(229,57,53,{intensity:.6f})">'
                f"{html_lib.escape(token)}</span>"
            )
        return (
            "<!DOCTYPE html>\n"
            '<html><head><meta charset="utf-8"/>'
            "<title>token attention</title></head>\n"
            f'<body>\n<p class="meta">skill: {html_lib.escape(skill.name)} '
            f'| score: {result.score:.6f}</p>\n'
            '<p class="tokens">' + " ".join(spans) + "</p>\n</body></html>\n"
        )

    raise ValueError(f"unknown format: {fmt!r}")
