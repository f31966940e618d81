"""Ranking and cluster-aware extraction metrics.

Gold labels that are equally informative for a sentence come grouped into
clusters: precision counts predicted labels found in any cluster, recall
counts clusters hit by at least one prediction, and redundancy measures how
many true positives could be dropped while keeping every hit cluster
represented. All arithmetic is plain Python floats so results are exactly
reproducible against independent reimplementations.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence, Set
from dataclasses import dataclass
from typing import NamedTuple


@dataclass(frozen=True)
class AnnotatedSentence:
    """One sentence with its relevance flag and disjoint gold skill clusters."""

    text: str
    relevant: bool
    clusters: tuple[frozenset[str], ...]

    def __post_init__(self):
        if any(not c for c in self.clusters):
            raise ValueError("clusters must be non-empty")
        seen: set[str] = set()
        for cluster in self.clusters:
            if seen & cluster:
                raise ValueError("clusters within a sentence must be disjoint")
            seen |= cluster
        if not self.relevant and self.clusters:
            raise ValueError("irrelevant sentences cannot carry clusters")

    @property
    def gold_labels(self) -> frozenset[str]:
        out: set[str] = set()
        for cluster in self.clusters:
            out |= cluster
        return frozenset(out)


@dataclass(frozen=True)
class AnnotatedAd:
    """A job ad: title plus ordered annotated sentences and its split tags."""

    ad_id: str
    title: str
    sentences: tuple[AnnotatedSentence, ...]
    sample_mode: str = "RANDOM"
    split: str = "dev"

    def __post_init__(self):
        if self.sample_mode not in ("RANDOM", "UNIQUE"):
            raise ValueError("sample_mode must be RANDOM or UNIQUE")
        if self.split not in ("dev", "test"):
            raise ValueError("split must be dev or test")


def scored_sentences(ads: Sequence[AnnotatedAd]) -> list[AnnotatedSentence]:
    """Relevant sentences with at least one gold cluster: the ranking unit."""
    return [
        s for ad in ads for s in ad.sentences if s.relevant and s.clusters
    ]


# -- ranking metrics --------------------------------------------------------


def rp_at_k(
    rankings: Sequence[Sequence[str]],
    golds: Sequence[Set[str]],
    k: int,
) -> float:
    """Macro-averaged R-Precision@K.

    Per sample: correct labels among the top k, divided by min(k, gold
    count); averaged over samples. Every sample must have at least one gold
    label.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(rankings) != len(golds):
        raise ValueError("rankings and gold sets must align")
    if not rankings:
        raise ValueError("at least one sample is required")
    total = 0.0
    for ranked, gold in zip(rankings, golds):
        if not gold:
            raise ValueError("sample with an empty gold set")
        hits = 0
        for label in ranked[:k]:
            if label in gold:
                hits += 1
        total += hits / min(k, len(gold))
    return total / len(rankings)


def mrr(rankings: Sequence[Sequence[str]], golds: Sequence[Set[str]]) -> float:
    """Mean reciprocal rank of the first correct label (0 when none appears)."""
    if len(rankings) != len(golds):
        raise ValueError("rankings and gold sets must align")
    if not rankings:
        raise ValueError("at least one sample is required")
    total = 0.0
    for ranked, gold in zip(rankings, golds):
        for position, label in enumerate(ranked, start=1):
            if label in gold:
                total += 1.0 / position
                break
    return total / len(rankings)


# -- cluster precision / recall / F1 ----------------------------------------


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def _counts(predicted: Set[str], clusters: Sequence[Set[str]]) -> tuple[int, int, int, int]:
    union: set[str] = set()
    for cluster in clusters:
        union |= set(cluster)
    true_positives = len(set(predicted) & union)
    hit = sum(1 for cluster in clusters if set(cluster) & set(predicted))
    return true_positives, len(set(predicted)), hit, len(clusters)


def _prf(tp: int, n_pred: int, hit: int, n_clusters: int) -> PRF:
    precision = tp / n_pred if n_pred else 0.0
    recall = hit / n_clusters if n_clusters else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0.0 else 0.0
    return PRF(precision, recall, f1)


def cluster_prf(predicted: Set[str], clusters: Sequence[Set[str]]) -> PRF:
    """Precision over predicted labels, recall over gold clusters, and
    their harmonic mean, for a single sentence."""
    return _prf(*_counts(predicted, clusters))


def corpus_cluster_prf(
    items: Sequence[tuple[Set[str], Sequence[Set[str]]]],
    average: str = "micro",
) -> PRF:
    """Corpus-level PRF over (predictions, clusters) pairs.

    Sentences with neither predictions nor clusters are excluded. Micro
    averaging pools the counts; macro averages per-sentence values.
    """
    included = [
        (pred, clusters) for pred, clusters in items if pred or clusters
    ]
    if not included:
        return PRF(0.0, 0.0, 0.0)
    if average == "micro":
        tp = n_pred = hit = n_clusters = 0
        for pred, clusters in included:
            a, b, c, d = _counts(pred, clusters)
            tp += a
            n_pred += b
            hit += c
            n_clusters += d
        return _prf(tp, n_pred, hit, n_clusters)
    if average == "macro":
        p_total = r_total = f_total = 0.0
        for pred, clusters in included:
            p, r, f = cluster_prf(pred, clusters)
            p_total += p
            r_total += r
            f_total += f
        n = len(included)
        return PRF(p_total / n, r_total / n, f_total / n)
    raise ValueError("average must be 'micro' or 'macro'")


# -- prediction redundancy ---------------------------------------------------


def prediction_redundancy(predicted: Set[str], clusters: Sequence[Set[str]]) -> float:
    """Largest fraction of true positives removable while every hit cluster
    stays represented.

    Clusters are disjoint, so the minimum set of true positives that still
    represents every hit cluster has exactly one member per hit cluster.
    Defined as 0 when there are no true positives.
    """
    union: set[str] = set()
    for cluster in clusters:
        union |= set(cluster)
    true_positives = set(predicted) & union
    if not true_positives:
        return 0.0
    represented = sum(1 for cluster in clusters if set(cluster) & true_positives)
    return (len(true_positives) - represented) / len(true_positives)


def corpus_redundancy(
    items: Sequence[tuple[Set[str], Sequence[Set[str]]]],
) -> float:
    """Mean per-sentence redundancy over sentences with at least one cluster."""
    scored = [
        prediction_redundancy(pred, clusters)
        for pred, clusters in items
        if clusters
    ]
    if not scored:
        return 0.0
    return sum(scored) / len(scored)


# -- inter-annotator agreement -----------------------------------------------


def annotator_agreement(
    ads_a: Sequence[AnnotatedAd], ads_b: Sequence[AnnotatedAd]
) -> float:
    """Mean symmetric F1 between two annotators over their shared ads.

    For each shared ad, annotator A's labels are scored against B's clusters
    and vice versa; the two F1 values are averaged, then averaged over ads.
    """
    by_id_b = {ad.ad_id: ad for ad in ads_b}
    shared = [(ad, by_id_b[ad.ad_id]) for ad in ads_a if ad.ad_id in by_id_b]
    if not shared:
        raise ValueError("annotators share no ads")
    total = 0.0
    for ad_a, ad_b in shared:
        if len(ad_a.sentences) != len(ad_b.sentences):
            raise ValueError(f"ad {ad_a.ad_id!r}: sentence counts differ")
        forward = corpus_cluster_prf(
            [(s_a.gold_labels, s_b.clusters)
             for s_a, s_b in zip(ad_a.sentences, ad_b.sentences)]
        ).f1
        backward = corpus_cluster_prf(
            [(s_b.gold_labels, s_a.clusters)
             for s_a, s_b in zip(ad_a.sentences, ad_b.sentences)]
        ).f1
        total += (forward + backward) / 2.0
    return total / len(shared)


# -- attention / rationale alignment ------------------------------------------


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties replaced by the mean of their positions."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = shared
        i = j + 1
    return ranks


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Spearman rank correlation with average-rank tie handling.

    Returns None when either vector has zero variance (correlation
    undefined).
    """
    if len(a) != len(b):
        raise ValueError("vectors must have equal length")
    if len(a) < 2:
        raise ValueError("vectors must have length at least 2")
    ra = average_ranks(a)
    rb = average_ranks(b)
    n = len(ra)
    mean_a = sum(ra) / n
    mean_b = sum(rb) / n
    cov = var_a = var_b = 0.0
    for x, y in zip(ra, rb):
        dx = x - mean_a
        dy = y - mean_b
        cov += dx * dy
        var_a += dx * dx
        var_b += dy * dy
    if var_a == 0.0 or var_b == 0.0:
        return None
    return cov / (var_a * var_b) ** 0.5


@dataclass(frozen=True)
class AlignmentResult:
    mean_rho: float | None
    used: int
    skipped: int


def attention_alignment(
    alphas: Sequence[Sequence[float]],
    rationales: Sequence[Sequence[int]],
) -> AlignmentResult:
    """Mean per-sentence Spearman correlation between attention weights and
    binary human rationales, both restricted to non-template tokens.

    Sentences whose rationale marks no token are skipped, as are sentences
    where either vector has zero variance.
    """
    if len(alphas) != len(rationales):
        raise ValueError("alphas and rationales must align")
    total = 0.0
    used = 0
    skipped = 0
    for alpha, rationale in zip(alphas, rationales):
        if len(alpha) != len(rationale):
            raise ValueError("alpha and rationale lengths differ")
        if not any(rationale):
            skipped += 1
            continue
        rho = spearman_rho(list(alpha), [float(r) for r in rationale])
        if rho is None:
            skipped += 1
            continue
        total += rho
        used += 1
    return AlignmentResult(
        mean_rho=(total / used) if used else None, used=used, skipped=skipped
    )


def evaluation_report(
    rankings: Sequence[Sequence[str]],
    golds: Sequence[Set[str]],
    prf_items: Sequence[tuple[Set[str], Sequence[Set[str]]]],
    metrics: Sequence[str],
) -> dict:
    """Flat metric-name-to-number mapping plus sample counts."""
    report: dict = {}
    for metric in metrics:
        if metric.startswith("rp@"):
            report[metric] = rp_at_k(rankings, golds, int(metric[3:]))
        elif metric == "mrr":
            report[metric] = mrr(rankings, golds)
        elif metric == "prf":
            prf = corpus_cluster_prf(prf_items)
            report["precision"] = prf.precision
            report["recall"] = prf.recall
            report["f1"] = prf.f1
        elif metric == "redundancy":
            report["redundancy"] = corpus_redundancy(prf_items)
        else:
            raise ValueError(f"unknown metric: {metric}")
    report["counts"] = {
        "samples": len(rankings),
        "skipped": len(prf_items) - sum(1 for p, c in prf_items if p or c),
    }
    return report
