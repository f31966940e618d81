"""Job-title normalization: contrast titles against comma-joined skill sets
through side-specific projections, then rank reference titles by cosine."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import ParameterSet, Tensor
from .encoder import EncoderConfig, Model, init_parameters
from .objective import cached_gradient_step, cosine_matrix, symmetric_infonce
from .tokenization import Vocabulary

Array = np.ndarray

MIN_UNIQUE_SKILLS = 5
DEFAULT_SKILL_CAP = 25


class PairBelowMinimumSkills(ValueError):
    """The ad has too few unique skills; the pair is filtered out, not fatal."""


@dataclass(frozen=True)
class TitleSkillPair:
    """A title with its capped skill name list and the rendered training text."""

    title: str
    skills: tuple[str, ...]
    rendered: str

    def __post_init__(self):
        if len(self.skills) > DEFAULT_SKILL_CAP:
            raise ValueError("rendered skill list exceeds the cap")


def build_pair(
    title: str,
    skill_names: Sequence[str],
    rng: np.random.Generator,
    cap: int = DEFAULT_SKILL_CAP,
) -> TitleSkillPair:
    """Deduplicate, shuffle, cap and comma-join an ad's skills.

    Ads with fewer than five unique skills are rejected so callers can drop
    them during dataset construction.
    """
    unique: list[str] = []
    seen: set[str] = set()
    for name in skill_names:
        if name not in seen:
            seen.add(name)
            unique.append(name)
    if len(unique) < MIN_UNIQUE_SKILLS:
        raise PairBelowMinimumSkills(
            f"{title!r}: {len(unique)} unique skills, need {MIN_UNIQUE_SKILLS}"
        )
    order = rng.permutation(len(unique))
    chosen = [unique[int(i)] for i in order[:cap]]
    return TitleSkillPair(title=title, skills=tuple(chosen), rendered=", ".join(chosen))


@dataclass(frozen=True)
class TitleTrainingConfig:
    batch_size: int = 128
    micro_batch_size: int = 64
    learning_rate: float = 5e-4
    scale: float = 20.0
    max_epochs: int = 1
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    projection_ratio: float = 1.5
    tied_projections: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.micro_batch_size < 1:
            raise ValueError("batch sizes must be positive")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")


@dataclass
class TitleModel:
    """Shared base encoder plus independent title-side and skill-set-side
    projections (a single shared matrix when trained tied)."""

    base: Model
    config: TitleTrainingConfig

    @property
    def params(self) -> ParameterSet:
        return self.base.params

    def _project(self, text: str, side: str) -> Tensor:
        pooled = self.base.skill_vector_node(text)
        return ag.matmul(pooled, self.params[side])

    def title_node(self, text: str) -> Tensor:
        return self._project(text, "proj_title")

    def skillset_node(self, text: str) -> Tensor:
        side = "proj_title" if self.config.tied_projections else "proj_skillset"
        return self._project(text, side)

    def encode_title(self, text: str) -> Array:
        with ag.no_grad():
            return self.title_node(text).values

    def encode_skillset(self, text: str) -> Array:
        with ag.no_grad():
            return self.skillset_node(text).values


def _linear_decay(step: int, total_steps: int, peak: float) -> float:
    return peak * (total_steps - step) / total_steps


def train_title_model(
    pairs: Sequence[TitleSkillPair],
    config: TitleTrainingConfig,
    encoder_config: EncoderConfig | None = None,
) -> TitleModel:
    """One epoch of symmetric InfoNCE over title/skill-set cosine matrices,
    with linearly decaying learning rate and no warmup."""
    if not pairs:
        raise ValueError("pairs must be non-empty")
    from .training import AdamW, DivergenceError, TrainingConfig  # optimizer reuse

    encoder_config = encoder_config or EncoderConfig(seed=config.seed)
    texts = [p.title for p in pairs] + [p.rendered for p in pairs]
    vocab = Vocabulary.build(texts, max_size=encoder_config.vocab_size)
    base = Model(vocab, init_parameters(encoder_config, len(vocab)), encoder_config)

    out_dim = int(round(encoder_config.dim * config.projection_ratio))
    proj_rng = np.random.Generator(np.random.PCG64(encoder_config.seed + 1))
    base.params.add("proj_title",
                    proj_rng.uniform(-0.05, 0.05, (encoder_config.dim, out_dim)))
    if not config.tied_projections:
        base.params.add("proj_skillset",
                        proj_rng.uniform(-0.05, 0.05, (encoder_config.dim, out_dim)))
    model = TitleModel(base=base, config=config)

    optimizer = AdamW(
        base.params,
        TrainingConfig(
            batch_size=config.batch_size,
            micro_batch_size=config.micro_batch_size,
            learning_rate=config.learning_rate,
            seed=config.seed,
            weight_decay=config.weight_decay,
            beta1=config.beta1,
            beta2=config.beta2,
            adam_epsilon=config.adam_epsilon,
        ),
    )
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = math.ceil(len(pairs) / config.batch_size)
    total_steps = steps_per_epoch * config.max_epochs
    order: list[int] = []
    position = 0
    for step in range(total_steps):
        batch = []
        while len(batch) < config.batch_size:
            if position >= len(order):
                order = [int(i) for i in rng.permutation(len(pairs))]
                position = 0
            batch.append(pairs[order[position]])
            position += 1
        grads, loss_value = cached_gradient_step(
            [p.title for p in batch],
            [p.rendered for p in batch],
            base.params,
            rep_left=model.title_node,
            rep_right=model.skillset_node,
            score_fn=cosine_matrix,
            loss_fn=lambda scores: symmetric_infonce(scores, config.scale),
            micro_batch_size=config.micro_batch_size,
        )
        if not math.isfinite(loss_value):
            raise DivergenceError(step)
        optimizer.step(grads, _linear_decay(step, total_steps, config.learning_rate))
    return model


def normalize(
    query: str, references: Sequence[str], model: TitleModel
) -> list[tuple[str, float]]:
    """Rank reference titles by cosine to the query, both through the
    title-side projection. Ties break by title string."""
    if not references:
        raise ValueError("references must be non-empty")
    query_vec = model.encode_title(query)
    scored = [
        (ref, ag.cosine(query_vec, model.encode_title(ref))) for ref in references
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


@dataclass(frozen=True)
class TitleBenchmark:
    """Query titles with their gold reference ids over a reference list."""

    queries: tuple[tuple[str, str], ...]  # (query title, gold reference title)
    references: tuple[str, ...]

    def __post_init__(self):
        missing = {gold for _, gold in self.queries} - set(self.references)
        if missing:
            raise ValueError(f"gold titles missing from references: {sorted(missing)}")


@dataclass(frozen=True)
class TitleEvalResult:
    mrr: float
    recall_at_5: float
    recall_at_10: float


def title_eval(benchmark: TitleBenchmark, model: TitleModel) -> TitleEvalResult:
    """MRR of the gold reference plus recall at top 5 and top 10."""
    reference_vectors = [
        (ref, model.encode_title(ref)) for ref in benchmark.references
    ]
    total_rr = 0.0
    hits5 = 0
    hits10 = 0
    for query, gold in benchmark.queries:
        query_vec = model.encode_title(query)
        scored = [
            (ref, ag.cosine(query_vec, vec)) for ref, vec in reference_vectors
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        rank = next(i for i, (ref, _) in enumerate(scored, start=1) if ref == gold)
        total_rr += 1.0 / rank
        hits5 += rank <= 5
        hits10 += rank <= 10
    n = len(benchmark.queries)
    return TitleEvalResult(total_rr / n, hits5 / n, hits10 / n)


# -- persistence ---------------------------------------------------------------


def save_title_model(model: TitleModel, path: str | Path) -> None:
    from .training import write_container

    write_container(
        path, "title", model.params, model.base.vocab,
        manifest_extra={
            "encoder_config": _encoder_config_dict(model.base.config),
            "title_config": _title_config_dict(model.config),
        },
    )


def load_title_model(path: str | Path) -> TitleModel:
    from .training import read_container

    manifest, vocab, params = read_container(path)
    if manifest["kind"] != "title":
        raise ValueError(f"{path}: expected a title checkpoint")
    encoder_config = EncoderConfig(**manifest["encoder_config"])
    config = TitleTrainingConfig(**manifest["title_config"])
    return TitleModel(base=Model(vocab, params, encoder_config), config=config)


def _encoder_config_dict(config: EncoderConfig) -> dict:
    import dataclasses

    return dataclasses.asdict(config)


def _title_config_dict(config: TitleTrainingConfig) -> dict:
    import dataclasses

    return dataclasses.asdict(config)
