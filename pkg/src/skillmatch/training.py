"""End-to-end training: donor-sentence augmentation, proportional multi-task
batches, gradient-cached steps under a warmup/decay schedule, early stopping
on dev RP@5, ablation switches, and byte-stable checkpoints."""

from __future__ import annotations

import dataclasses
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import ParameterSet
from .encoder import EncoderConfig, Model, init_parameters
from .evaluation import AnnotatedAd, rp_at_k, scored_sentences
from .extraction import Taxonomy, rank_skills
from .objective import (
    TaskKind,
    TrainingPair,
    cached_gradient_step,
    context_score_matrix,
    cosine_matrix,
    sample_task,
    symmetric_infonce,
)
from .tokenization import Vocabulary

Array = np.ndarray

CHECKPOINT_FORMAT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class AblationFlags:
    no_context: bool = False
    no_augmentation: bool = False
    asymmetric_loss: bool = False
    no_descriptions: bool = False
    with_synonyms: bool = False


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    micro_batch_size: int = 64
    learning_rate: float = 5e-4
    warmup_fraction: float = 0.10
    scale: float = 20.0
    max_epochs: int = 1
    seed: int = 0
    ablation: AblationFlags = field(default_factory=AblationFlags)
    eval_every: float = 0.10
    patience: int = 2
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    mask_duplicate_skills: bool = False

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie strictly between 0 and 1")
        if not 0.0 < self.eval_every <= 1.0:
            raise ValueError("eval_every must lie in (0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 1 or self.micro_batch_size < 1:
            raise ValueError("batch sizes must be positive")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")


@dataclass
class EarlyStopState:
    """Halt once the dev metric fails to increase ``patience`` times in a row."""

    patience: int
    best: float = -math.inf
    non_increase: int = 0
    eval_steps: list[int] = field(default_factory=list)

    def record(self, value: float, step: int) -> bool:
        """Fold in one evaluation; returns True when training should halt."""
        self.eval_steps.append(step)
        if value > self.best:
            self.best = value
            self.non_increase = 0
        else:
            self.non_increase += 1
        return self.non_increase >= self.patience


def augment(sentence: str, donor: str, rng: np.random.Generator) -> str:
    """Prepend or append (fair coin) a donor sentence, space separated."""
    if rng.random() < 0.5:
        return donor + " " + sentence
    return sentence + " " + donor


def learning_rate_at(
    step: float, total_steps: int, peak: float, warmup_fraction: float
) -> float:
    """Piecewise-linear schedule: 0 at step 0, peak at the end of warmup,
    0 again at the final step."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    warmup_end = warmup_fraction * total_steps
    if step <= warmup_end:
        return peak * step / warmup_end
    return max(0.0, peak * (total_steps - step) / (total_steps - warmup_end))


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(self, params: ParameterSet, config: TrainingConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self._m = {name: np.zeros_like(t.values) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.values) for name, t in params.items()}

    def step(self, grads: Mapping[str, Array], lr: float) -> None:
        b1, b2 = self.config.beta1, self.config.beta2
        eps, decay = self.config.adam_epsilon, self.config.weight_decay
        self.step_count += 1
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        for name, tensor in self.params.items():
            g = grads[name]
            self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            self._v[name] = b2 * self._v[name] + (1.0 - b2) * (g * g)
            update = (self._m[name] / bias1) / (np.sqrt(self._v[name] / bias2) + eps)
            tensor.values = tensor.values - lr * (update + decay * tensor.values)
        self.params.mark_mutated()


# -- task assembly -------------------------------------------------------------


def description_pairs(taxonomy: Taxonomy) -> list[tuple[str, str]]:
    """(skill name, description) items for the auxiliary matching task."""
    return [(s.name, s.description) for s in taxonomy if s.description]


def synonym_pairs(taxonomy: Taxonomy) -> list[tuple[str, str]]:
    """(skill name, synonym) items, one per synonym."""
    return [(s.name, syn) for s in taxonomy for syn in s.synonyms]


@dataclass
class TrainingAssembly:
    """The pieces of the training graph after ablation flags are applied."""

    datasets: dict[TaskKind, list]
    use_context_scorer: bool
    forward_only: bool
    augment_enabled: bool


def apply_ablation(
    config: TrainingConfig,
    datasets: Mapping[TaskKind, Sequence],
) -> TrainingAssembly:
    """Resolve ablation flags into concrete datasets and scorer/loss choices."""
    flags = config.ablation
    pairs = list(datasets.get(TaskKind.SENTENCE_SKILL, ()))
    if not pairs:
        raise ValueError("the sentence/skill dataset must be non-empty")
    active: dict[TaskKind, list] = {TaskKind.SENTENCE_SKILL: pairs}
    descriptions = list(datasets.get(TaskKind.DESCRIPTION_SKILL, ()))
    if descriptions and not flags.no_descriptions:
        active[TaskKind.DESCRIPTION_SKILL] = descriptions
    if flags.with_synonyms:
        synonyms = list(datasets.get(TaskKind.SKILL_SYNONYM, ()))
        if not synonyms:
            raise ValueError("with_synonyms requires synonym data in the taxonomy")
        active[TaskKind.SKILL_SYNONYM] = synonyms
    return TrainingAssembly(
        datasets=active,
        use_context_scorer=not flags.no_context,
        forward_only=flags.asymmetric_loss,
        augment_enabled=not flags.no_augmentation,
    )


class _TaskStream:
    """Seeded, reshuffling cyclic iterator over one task's items."""

    def __init__(self, items: Sequence, rng: np.random.Generator):
        self.items = list(items)
        self.rng = rng
        self.order: list[int] = []
        self.pos = 0

    def draw(self, count: int) -> list:
        batch = []
        while len(batch) < count:
            if self.pos >= len(self.order):
                self.order = [int(i) for i in self.rng.permutation(len(self.items))]
                self.pos = 0
            batch.append(self.items[self.order[self.pos]])
            self.pos += 1
        return batch


def _duplicate_mask(skill_ids: Sequence[str]) -> Array | None:
    """Additive logit penalty hiding in-batch repeats of the same skill."""
    n = len(skill_ids)
    mask = np.zeros((n, n))
    found = False
    for i in range(n):
        for k in range(n):
            if i != k and skill_ids[k] == skill_ids[i]:
                mask[i, k] = -1e9
                found = True
    return mask if found else None


def dev_rp_at_k(model: Model, taxonomy: Taxonomy, dev_ads: Sequence[AnnotatedAd],
                k: int = 5) -> float:
    """RP@k of full-taxonomy rankings over the scored dev sentences."""
    sentences = scored_sentences(dev_ads)
    if not sentences:
        raise ValueError("dev annotations contain no scored sentences")
    rankings = []
    golds = []
    for sentence in sentences:
        ranked = rank_skills(sentence.text, taxonomy, model)
        rankings.append([p.skill_id for p in ranked])
        golds.append(sentence.gold_labels)
    return rp_at_k(rankings, golds, k)


def train(
    config: TrainingConfig,
    datasets: Mapping[TaskKind, Sequence],
    dev_ads: Sequence[AnnotatedAd],
    taxonomy: Taxonomy,
    encoder_config: EncoderConfig | None = None,
) -> "Checkpoint":
    """Run at most ``max_epochs`` epochs of cached gradient steps and return
    the checkpoint with the best dev RP@5 seen at any evaluation."""
    if not dev_ads:
        raise ValueError("a non-empty dev set is required")
    assembly = apply_ablation(config, datasets)
    encoder_config = encoder_config or EncoderConfig(seed=config.seed)

    corpus_texts = [p.sentence for p in assembly.datasets[TaskKind.SENTENCE_SKILL]]
    corpus_texts += [s.name for s in taxonomy]
    corpus_texts += [s.description for s in taxonomy if s.description]
    corpus_texts += [syn for s in taxonomy for syn in s.synonyms]
    vocab = Vocabulary.build(corpus_texts, max_size=encoder_config.vocab_size)
    model = Model(vocab, init_parameters(encoder_config, len(vocab)), encoder_config)

    rng = np.random.default_rng(config.seed)
    sizes = {kind: len(items) for kind, items in assembly.datasets.items()}
    streams = {kind: _TaskStream(items, rng) for kind, items in assembly.datasets.items()}
    sentence_pool = corpus_texts[: sizes[TaskKind.SENTENCE_SKILL]]
    pool_position: dict[str, int] = {}
    for position, text in enumerate(sentence_pool):
        pool_position.setdefault(text, position)

    total_items = sum(sizes.values())
    steps_per_epoch = math.ceil(total_items / config.batch_size)
    total_steps = steps_per_epoch * config.max_epochs
    eval_interval = max(1, math.ceil(config.eval_every * total_steps))

    optimizer = AdamW(model.params, config)
    stopper = EarlyStopState(patience=config.patience)
    history: list[tuple[int, float]] = []
    best_values: dict[str, Array] | None = None
    steps_run = 0

    def run_eval(step: int) -> bool:
        nonlocal best_values
        score = dev_rp_at_k(model, taxonomy, dev_ads, k=5)
        history.append((step, score))
        improved = score > stopper.best
        halt = stopper.record(score, step)
        if improved or best_values is None:
            best_values = model.params.copy_values()
        return halt

    for step in range(total_steps):
        kind = sample_task(sizes, rng)
        batch = streams[kind].draw(config.batch_size)
        exclusion = None
        if kind is TaskKind.SENTENCE_SKILL:
            left_texts = []
            for pair in batch:
                sentence = pair.sentence
                if assembly.augment_enabled and len(sentence_pool) > 1:
                    donor = _draw_donor(sentence_pool, pool_position.get(sentence), rng)
                    sentence = augment(sentence, donor, rng)
                left_texts.append(sentence)
            right_texts = [taxonomy.get(pair.skill_id).name for pair in batch]
            if config.mask_duplicate_skills:
                exclusion = _duplicate_mask([pair.skill_id for pair in batch])
            if assembly.use_context_scorer:
                rep_left = model.encode_text
                score_fn = context_score_matrix
            else:
                rep_left = model.skill_vector_node
                score_fn = cosine_matrix
        else:
            left_texts = [left for left, _ in batch]
            right_texts = [right for _, right in batch]
            rep_left = model.skill_vector_node
            score_fn = cosine_matrix

        def loss_fn(scores, _mask=exclusion):
            if _mask is not None:
                scores = ag.add(scores, _mask)
            return symmetric_infonce(scores, config.scale,
                                     forward_only=assembly.forward_only)

        grads, loss_value = cached_gradient_step(
            left_texts, right_texts, model.params,
            rep_left=rep_left,
            rep_right=model.skill_vector_node,
            score_fn=score_fn,
            loss_fn=loss_fn,
            micro_batch_size=config.micro_batch_size,
        )
        if not math.isfinite(loss_value):
            raise DivergenceError(step)
        lr = learning_rate_at(step, total_steps, config.learning_rate,
                              config.warmup_fraction)
        optimizer.step(grads, lr)
        steps_run = step + 1

        if (step + 1) % eval_interval == 0 or step + 1 == total_steps:
            if run_eval(step + 1):
                break

    if not history:
        run_eval(steps_run)
    model.params.load_values(best_values)
    return Checkpoint(
        model=model, config=config, step=steps_run,
        dev_history=tuple(history),
    )


def _draw_donor(pool: Sequence[str], own: int | None, rng: np.random.Generator) -> str:
    """Uniform donor from the pool, excluding the sentence's own position."""
    if own is None:
        return pool[int(rng.integers(len(pool)))]
    j = int(rng.integers(len(pool) - 1))
    if j >= own:
        j += 1
    return pool[j]


# -- checkpoint container -------------------------------------------------------


def _config_to_dict(config) -> dict:
    return dataclasses.asdict(config)


def write_container(
    path: str | Path,
    kind: str,
    params: ParameterSet,
    vocab: Vocabulary,
    manifest_extra: dict,
) -> None:
    """Write the versioned checkpoint container.

    Layout: one JSON manifest line, then the vocabulary text, then the named
    parameter blocks as raw little-endian float64 in manifest order. Every
    byte is deterministic for identical inputs.
    """
    vocab_bytes = vocab.dumps().encode("utf-8")
    manifest = {
        "format": "skillmatch-checkpoint",
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "vocab_sha256": vocab.sha256(),
        "vocab_num_bytes": len(vocab_bytes),
        "params": [
            {"name": name, "shape": list(t.values.shape)} for name, t in params.items()
        ],
        **manifest_extra,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":"),
                        ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(header + b"\n")
        handle.write(vocab_bytes)
        for _, tensor in params.items():
            handle.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def read_container(path: str | Path) -> tuple[dict, Vocabulary, ParameterSet]:
    with open(path, "rb") as handle:
        header = handle.readline()
        manifest = json.loads(header.decode("utf-8"))
        if manifest.get("format") != "skillmatch-checkpoint":
            raise ValueError(f"{path}: not a checkpoint container")
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported format version {manifest.get('format_version')}"
            )
        vocab = Vocabulary.loads(
            handle.read(manifest["vocab_num_bytes"]).decode("utf-8")
        )
        if vocab.sha256() != manifest["vocab_sha256"]:
            raise ValueError(f"{path}: vocabulary hash mismatch")
        params = ParameterSet()
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = handle.read(count * 8)
            values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            params.add(entry["name"], values)
    return manifest, vocab, params


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to reproduce inference."""

    model: Model
    config: TrainingConfig
    step: int
    dev_history: tuple[tuple[int, float], ...]

    def save(self, path: str | Path) -> None:
        write_container(
            path, "encoder", self.model.params, self.model.vocab,
            manifest_extra={
                "encoder_config": _config_to_dict(self.model.config),
                "training_config": _config_to_dict(self.config),
                "step": self.step,
                "dev_history": [[s, v] for s, v in self.dev_history],
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        manifest, vocab, params = read_container(path)
        if manifest["kind"] != "encoder":
            raise ValueError(f"{path}: expected an encoder checkpoint")
        encoder_config = EncoderConfig(**manifest["encoder_config"])
        training_dict = dict(manifest["training_config"])
        training_dict["ablation"] = AblationFlags(**training_dict["ablation"])
        config = TrainingConfig(**training_dict)
        return cls(
            model=Model(vocab, params, encoder_config),
            config=config,
            step=manifest["step"],
            dev_history=tuple((int(s), float(v)) for s, v in manifest["dev_history"]),
        )


def best_dev_score(checkpoint: Checkpoint) -> float:
    return max(value for _, value in checkpoint.dev_history)


@dataclass(frozen=True)
class SweepRow:
    batch_size: int
    mean_rp5: float
    std_rp5: float
    scores: tuple[float, ...]


def batch_size_sweep(
    base_config: TrainingConfig,
    datasets: Mapping[TaskKind, Sequence],
    dev_ads: Sequence[AnnotatedAd],
    taxonomy: Taxonomy,
    sizes: Sequence[int],
    seeds: Sequence[int],
    encoder_config: EncoderConfig | None = None,
) -> list[SweepRow]:
    """Train one model per (batch size, seed) and report best dev RP@5,
    mean and standard deviation per batch size."""
    rows = []
    for size in sizes:
        scores = []
        for seed in seeds:
            config = replace(
                base_config,
                batch_size=size,
                micro_batch_size=min(base_config.micro_batch_size, size),
                seed=seed,
            )
            enc = encoder_config or EncoderConfig()
            checkpoint = train(
                config, datasets, dev_ads, taxonomy,
                encoder_config=replace(enc, seed=seed),
            )
            scores.append(best_dev_score(checkpoint))
        mean = sum(scores) / len(scores)
        if len(scores) > 1:
            std = math.sqrt(sum((s - mean) ** 2 for s in scores) / (len(scores) - 1))
        else:
            std = 0.0
        rows.append(SweepRow(size, mean, std, tuple(scores)))
    return rows
