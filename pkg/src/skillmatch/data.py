"""Line-delimited JSON corpora: taxonomy, training pairs, annotations and
predictions, plus a manifest with content hashes and a synthetic-corpus
generator for end-to-end tests."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import AnnotatedAd, AnnotatedSentence
from .extraction import Skill, Taxonomy
from .objective import TrainingPair

CORPUS_FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """A corpus file violates its schema; carries the offending location."""

    def __init__(self, path, line: int | None, message: str):
        location = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{location}: {message}")
        self.path = str(path)
        self.line = line


def _dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _iter_records(path: str | Path):
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(path, line_no, f"malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataFormatError(path, line_no, "record must be a JSON object")
            yield line_no, record


def _require(record: dict, key: str, kind, path, line_no: int):
    if key not in record:
        raise DataFormatError(path, line_no, f"missing field {key!r}")
    value = record[key]
    if not isinstance(value, kind):
        raise DataFormatError(path, line_no, f"field {key!r} has the wrong type")
    return value


# -- taxonomy -------------------------------------------------------------------


def load_taxonomy(path: str | Path) -> Taxonomy:
    skills = []
    seen: set[str] = set()
    for line_no, record in _iter_records(path):
        skill_id = _require(record, "id", str, path, line_no)
        name = _require(record, "name", str, path, line_no)
        if skill_id in seen:
            raise DataFormatError(path, line_no, f"duplicate skill id {skill_id!r}")
        seen.add(skill_id)
        description = record.get("description")
        if description is not None and not isinstance(description, str):
            raise DataFormatError(path, line_no, "field 'description' has the wrong type")
        synonyms = record.get("synonyms", [])
        if not isinstance(synonyms, list) or any(not isinstance(s, str) for s in synonyms):
            raise DataFormatError(path, line_no, "field 'synonyms' must be a string list")
        try:
            skills.append(Skill(id=skill_id, name=name, description=description,
                                synonyms=tuple(synonyms)))
        except ValueError as exc:
            raise DataFormatError(path, line_no, str(exc)) from exc
    if not skills:
        raise DataFormatError(path, None, "taxonomy is empty")
    return Taxonomy(skills)


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for skill in taxonomy:
            record: dict = {"id": skill.id, "name": skill.name}
            if skill.description is not None:
                record["description"] = skill.description
            if skill.synonyms:
                record["synonyms"] = list(skill.synonyms)
            handle.write(_dump_record(record) + "\n")


# -- sentence/skill pairs ---------------------------------------------------------


def load_pairs(path: str | Path, taxonomy: Taxonomy) -> list[TrainingPair]:
    pairs = []
    seen: set[tuple[str, str]] = set()
    for line_no, record in _iter_records(path):
        sentence = _require(record, "sentence", str, path, line_no)
        skill_id = _require(record, "skill_id", str, path, line_no)
        if skill_id not in taxonomy:
            raise DataFormatError(path, line_no, f"unknown skill id {skill_id!r}")
        key = (sentence, skill_id)
        if key in seen:
            raise DataFormatError(path, line_no, "duplicate pair record")
        seen.add(key)
        pairs.append(TrainingPair(sentence=sentence, skill_id=skill_id))
    return pairs


def save_pairs(pairs: Sequence[TrainingPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(
                _dump_record({"sentence": pair.sentence, "skill_id": pair.skill_id}) + "\n"
            )


# -- annotated ads ----------------------------------------------------------------


def load_annotations(path: str | Path, taxonomy: Taxonomy | None = None) -> list[AnnotatedAd]:
    ads = []
    seen: set[str] = set()
    for line_no, record in _iter_records(path):
        ad_id = _require(record, "ad_id", str, path, line_no)
        if ad_id in seen:
            raise DataFormatError(path, line_no, f"duplicate ad id {ad_id!r}")
        seen.add(ad_id)
        raw_sentences = _require(record, "sentences", list, path, line_no)
        sentences = []
        for raw in raw_sentences:
            if not isinstance(raw, dict):
                raise DataFormatError(path, line_no, "sentence entries must be objects")
            text = _require(raw, "text", str, path, line_no)
            relevant = _require(raw, "relevant", bool, path, line_no)
            clusters = raw.get("clusters", [])
            if not isinstance(clusters, list):
                raise DataFormatError(path, line_no, "field 'clusters' must be a list")
            parsed = []
            for cluster in clusters:
                if not isinstance(cluster, list) or not cluster:
                    raise DataFormatError(
                        path, line_no, "clusters must be non-empty lists of skill ids"
                    )
                for skill_id in cluster:
                    if not isinstance(skill_id, str):
                        raise DataFormatError(path, line_no, "skill ids must be strings")
                    if taxonomy is not None and skill_id not in taxonomy:
                        raise DataFormatError(
                            path, line_no, f"unknown skill id {skill_id!r}"
                        )
                parsed.append(frozenset(cluster))
            try:
                sentences.append(
                    AnnotatedSentence(text=text, relevant=relevant, clusters=tuple(parsed))
                )
            except ValueError as exc:
                raise DataFormatError(path, line_no, str(exc)) from exc
        try:
            ads.append(
                AnnotatedAd(
                    ad_id=ad_id,
                    title=record.get("title", ""),
                    sentences=tuple(sentences),
                    sample_mode=record.get("sample_mode", "RANDOM"),
                    split=record.get("split", "dev"),
                )
            )
        except ValueError as exc:
            raise DataFormatError(path, line_no, str(exc)) from exc
    return ads


def save_annotations(ads: Sequence[AnnotatedAd], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for ad in ads:
            record = {
                "ad_id": ad.ad_id,
                "title": ad.title,
                "split": ad.split,
                "sample_mode": ad.sample_mode,
                "sentences": [
                    {
                        "text": s.text,
                        "relevant": s.relevant,
                        "clusters": [sorted(c) for c in s.clusters],
                    }
                    for s in ad.sentences
                ],
            }
            handle.write(_dump_record(record) + "\n")


# -- predictions -------------------------------------------------------------------


def load_predictions(path: str | Path) -> list[dict]:
    """Prediction records: {sentence?, ad_id?, sentence_index?, predictions}."""
    records = []
    for line_no, record in _iter_records(path):
        predictions = _require(record, "predictions", list, path, line_no)
        for entry in predictions:
            if (
                not isinstance(entry, dict)
                or not isinstance(entry.get("skill_id"), str)
                or not isinstance(entry.get("score"), (int, float))
            ):
                raise DataFormatError(
                    path, line_no, "predictions must be {skill_id, score} objects"
                )
        records.append(record)
    return records


def save_predictions(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(_dump_record(record) + "\n")


# -- corpus manifest ----------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _count_lines(path: Path) -> int:
    with open(path, "r", encoding="utf-8") as handle:
        return sum(1 for line in handle if line.strip())


@dataclass(frozen=True)
class CorpusManifest:
    """Format version plus per-file record counts and content hashes."""

    format_version: int
    files: dict[str, dict]

    @classmethod
    def describe(cls, directory: str | Path, names: Sequence[str]) -> "CorpusManifest":
        directory = Path(directory)
        files = {}
        for name in names:
            path = directory / name
            files[name] = {"records": _count_lines(path), "sha256": _sha256_file(path)}
        return cls(format_version=CORPUS_FORMAT_VERSION, files=files)

    def save(self, path: str | Path) -> None:
        payload = {"format_version": self.format_version, "files": self.files}
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def verify(cls, directory: str | Path, manifest_name: str = "manifest.json") -> None:
        """Re-hash every listed file; raise DataFormatError on any mismatch."""
        directory = Path(directory)
        payload = json.loads((directory / manifest_name).read_text(encoding="utf-8"))
        if payload.get("format_version") != CORPUS_FORMAT_VERSION:
            raise DataFormatError(
                directory / manifest_name, None,
                f"unsupported corpus format version {payload.get('format_version')}",
            )
        for name, info in payload["files"].items():
            actual = _sha256_file(directory / name)
            if actual != info["sha256"]:
                raise DataFormatError(directory / name, None, "content hash mismatch")


# -- synthetic corpus ---------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticCorpus:
    taxonomy: Taxonomy
    pairs: list[TrainingPair]
    dev_ads: list[AnnotatedAd]
    test_ads: list[AnnotatedAd]


def generate_synthetic_corpus(
    skill_count: int = 50,
    sentences_per_skill: int = 10,
    vocab_size: int = 250,
    noise_rate: float = 0.2,
    seed: int = 0,
    heldout_per_skill: int = 2,
    sentence_length: tuple[int, int] = (6, 10),
    keywords_per_skill: int = 3,
) -> SyntheticCorpus:
    """Deterministic toy corpus with disjoint per-skill keywords.

    Each skill owns ``keywords_per_skill`` tokens nobody else uses; sentences
    mix those keywords with shared noise tokens at ``noise_rate``. Held-out
    sentences become exactly-annotated dev/test ads (one single-skill cluster
    per sentence), so all annotations are correct by construction.
    """
    if skill_count <= 0 or sentences_per_skill <= 0:
        raise ValueError("counts must be positive")
    noise_pool_size = vocab_size - skill_count * keywords_per_skill
    if noise_pool_size < 1:
        raise ValueError(
            f"vocab size {vocab_size} too small for {skill_count} skills with "
            f"{keywords_per_skill} disjoint keywords each"
        )
    rng = np.random.default_rng(seed)
    keywords = [
        [f"kw{s:03d}{chr(ord('a') + j)}" for j in range(keywords_per_skill)]
        for s in range(skill_count)
    ]
    noise_pool = [f"noise{j:03d}" for j in range(noise_pool_size)]

    skills = []
    for s in range(skill_count):
        desc_words = list(keywords[s])
        desc_words.append(noise_pool[int(rng.integers(len(noise_pool)))])
        skills.append(
            Skill(
                id=f"S{s:03d}",
                name=" ".join(keywords[s]),
                description=" ".join(desc_words),
                synonyms=(" ".join(reversed(keywords[s])),),
            )
        )
    taxonomy = Taxonomy(skills)

    def make_sentence(skill_index: int) -> str:
        low, high = sentence_length
        length = int(rng.integers(low, high + 1))
        while True:
            words = []
            for _ in range(length):
                if rng.random() < noise_rate:
                    words.append(noise_pool[int(rng.integers(len(noise_pool)))])
                else:
                    words.append(keywords[skill_index][int(rng.integers(keywords_per_skill))])
            if any(w in keywords[skill_index] for w in words):
                return " ".join(words)

    pairs = [
        TrainingPair(sentence=make_sentence(s), skill_id=skills[s].id)
        for s in range(skill_count)
        for _ in range(sentences_per_skill)
    ]

    def make_ads(split: str) -> list[AnnotatedAd]:
        sentences = [
            AnnotatedSentence(
                text=make_sentence(s),
                relevant=True,
                clusters=(frozenset({skills[s].id}),),
            )
            for s in range(skill_count)
            for _ in range(heldout_per_skill)
        ]
        ads = []
        per_ad = 10
        for start in range(0, len(sentences), per_ad):
            chunk = list(sentences[start:start + per_ad])
            chunk.append(
                AnnotatedSentence(text="contact us for details", relevant=False,
                                  clusters=())
            )
            ads.append(
                AnnotatedAd(
                    ad_id=f"{split}-ad-{start // per_ad:03d}",
                    title=f"synthetic ad {start // per_ad:03d}",
                    sentences=tuple(chunk),
                    sample_mode="RANDOM",
                    split=split,
                )
            )
        return ads

    return SyntheticCorpus(
        taxonomy=taxonomy,
        pairs=pairs,
        dev_ads=make_ads("dev"),
        test_ads=make_ads("test"),
    )


def write_corpus(corpus: SyntheticCorpus, directory: str | Path) -> None:
    """Write taxonomy, pairs, dev/test annotations and the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_taxonomy(corpus.taxonomy, directory / "taxonomy.jsonl")
    save_pairs(corpus.pairs, directory / "pairs.jsonl")
    save_annotations(corpus.dev_ads, directory / "dev.jsonl")
    save_annotations(corpus.test_ads, directory / "test.jsonl")
    manifest = CorpusManifest.describe(
        directory, ["taxonomy.jsonl", "pairs.jsonl", "dev.jsonl", "test.jsonl"]
    )
    manifest.save(directory / "manifest.json")
