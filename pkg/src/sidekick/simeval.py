"""Information-content similarity and drug-pair evaluation.

IC uses descendant-propagated annotation frequency with a natural log;
pairwise similarity is the most-informative-common-ancestor score
combined bidirectionally by best-match averaging. Ranking quality is the
Mann-Whitney AUC with midrank tie handling. A flat edge-list loader lets
the same machinery run over a regulatory-terminology hierarchy as a
baseline, with optional normalization of codes to their preferred-term
level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

from .ontology import CycleError, OntologyGraph, OntologyTerm

LEVEL_KEY = "level"


class CorpusError(ValueError):
    pass


@dataclass
class AnnotationCorpus:
    annotations: dict[str, set[str]]

    @property
    def universe(self) -> int:
        return len(self.annotations)


@dataclass
class DrugPair:
    a: str
    b: str
    positive: bool

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("pair members must differ")
        if self.b < self.a:
            self.a, self.b = self.b, self.a


@dataclass
class EvalReport:
    auc: float
    mean_pos: float
    mean_neg: float
    delta: float
    positives: int
    negatives: int

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "mean_pos": self.mean_pos,
            "mean_neg": self.mean_neg,
            "delta": self.delta,
            "positives": self.positives,
            "negatives": self.negatives,
        }


def compute_ic(corpus: AnnotationCorpus, graph: OntologyGraph) -> dict[str, float]:
    """Per-term information content from annotation frequency.

    A drug counts toward a term when any of its annotations lies in the
    term's descendants-or-self, so frequency propagates up the hierarchy
    and IC is antitone along is_a. Terms never reached stay out of the
    table.
    """
    if not corpus.annotations:
        raise CorpusError("annotation corpus is empty")
    missing = sorted(
        t for terms in corpus.annotations.values() for t in terms if t not in graph
    )
    if missing:
        raise CorpusError(f"annotations reference unknown terms: {missing[:5]}")

    counts: dict[str, int] = {}
    for terms in corpus.annotations.values():
        covered: set[str] = set()
        for term in terms:
            covered |= graph.ancestors_or_self(term)
        for term in covered:
            counts[term] = counts.get(term, 0) + 1

    universe = corpus.universe
    return {term: -math.log(freq / universe) for term, freq in counts.items()}


def resnik(t1: str, t2: str, ic: dict[str, float], graph: OntologyGraph) -> float:
    """IC of the most informative common ancestor (terms included); 0 when
    no common ancestor carries an IC entry."""
    common = graph.ancestors_or_self(t1) & graph.ancestors_or_self(t2)
    scores = [ic[t] for t in common if t in ic]
    return max(scores) if scores else 0.0


def bma(D1: set[str], D2: set[str], ic: dict[str, float],
        graph: OntologyGraph) -> float:
    """Best-match average of pairwise most-informative-ancestor scores."""
    if not D1 or not D2:
        raise ValueError("annotation sets must be non-empty")
    table = {(a, b): resnik(a, b, ic, graph) for a in D1 for b in D2}
    forward = sum(max(table[(a, b)] for b in D2) for a in D1) / len(D1)
    backward = sum(max(table[(a, b)] for a in D1) for b in D2) / len(D2)
    return 0.5 * (forward + backward)


def load_hierarchy_edges(
    edges: list[tuple[str, str, str]]
) -> OntologyGraph:
    """Build an ontology graph from (child, parent, level) rows.

    An empty parent declares a root. The level tag describes the child
    term and lands in its metadata; parents seen only on the right get
    their level from their own row, if any.
    """
    parents: dict[str, list[str]] = {}
    levels: dict[str, str] = {}
    for child, parent, level in edges:
        parents.setdefault(child, [])
        if parent:
            parents.setdefault(parent, [])
            if parent not in parents[child]:
                parents[child].append(parent)
        if level:
            levels[child] = level

    terms = {
        code: OntologyTerm(
            id=code, name=code, parents=plist,
            metadata={LEVEL_KEY: levels[code]} if code in levels else {},
        )
        for code, plist in parents.items()
    }
    try:
        return OntologyGraph(terms)
    except CycleError:
        raise


def normalize_to_level(graph: OntologyGraph, code: str,
                       level: str = "PT") -> set[str]:
    """Replace a code below ``level`` with its nearest ancestors at it.

    Codes already at or above the target level pass through unchanged;
    codes with no ancestor at the level map to nothing.
    """
    got = graph.terms[code].metadata.get(LEVEL_KEY) if code in graph else None
    if got == level or code not in graph:
        return {code} if code in graph else set()
    hierarchy_order = ["LLT", "PT", "HLT", "HLGT", "SOC"]
    if got in hierarchy_order and hierarchy_order.index(got) > \
            hierarchy_order.index(level):
        return {code}
    out = set()
    frontier = set(graph.terms[code].parents)
    while frontier and not out:
        nxt: set[str] = set()
        for parent in frontier:
            if graph.terms[parent].metadata.get(LEVEL_KEY) == level:
                out.add(parent)
            else:
                nxt.update(graph.terms[parent].parents)
        frontier = nxt
    return out


def build_pairs(targets: dict[str, set[str]], drugs: list[str]) -> list[DrugPair]:
    """All unordered pairs over ``drugs``; positive when target sets meet."""
    unknown = [d for d in drugs if d not in targets]
    if unknown:
        raise ValueError(f"drugs without target data: {unknown[:5]}")
    return [
        DrugPair(a=a, b=b, positive=bool(targets[a] & targets[b]))
        for a, b in combinations(drugs, 2)
    ]


def auc_roc(scores: list[float], labels: list[bool]) -> float:
    """Mann-Whitney AUC with midrank tie correction."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")

    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + 1 + j + 1) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1

    rank_sum = sum(r for r, flag in zip(ranks, labels) if flag)
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(corpus: AnnotationCorpus, graph: OntologyGraph,
             pairs: list[DrugPair]) -> EvalReport:
    """Score every pair by BMA similarity and report AUC + class means."""
    missing = sorted(
        {d for p in pairs for d in (p.a, p.b) if d not in corpus.annotations}
    )
    if missing:
        raise CorpusError(f"pairs reference unannotated drugs: {missing[:5]}")

    ic = compute_ic(corpus, graph)
    scores: list[float] = []
    labels: list[bool] = []
    for pair in pairs:
        scores.append(bma(corpus.annotations[pair.a], corpus.annotations[pair.b],
                          ic, graph))
        labels.append(pair.positive)

    pos = [s for s, flag in zip(scores, labels) if flag]
    neg = [s for s, flag in zip(scores, labels) if not flag]
    mean_pos = sum(pos) / len(pos)
    mean_neg = sum(neg) / len(neg)
    return EvalReport(
        auc=auc_roc(scores, labels),
        mean_pos=mean_pos,
        mean_neg=mean_neg,
        delta=mean_pos - mean_neg,
        positives=len(pos),
        negatives=len(neg),
    )


def score_pairs(corpus: AnnotationCorpus, graph: OntologyGraph,
                pairs: list[DrugPair]) -> list[tuple[DrugPair, float]]:
    """Per-pair BMA scores (for the optional scores CSV)."""
    ic = compute_ic(corpus, graph)
    return [
        (p, bma(corpus.annotations[p.a], corpus.annotations[p.b], ic, graph))
        for p in pairs
    ]


# --- file loaders -------------------------------------------------------------


def load_annotations(path: str | Path) -> AnnotationCorpus:
    """TSV of drug-id <tab> term-id rows."""
    annotations: dict[str, set[str]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if len(row) >= 2 and row[0].strip():
                annotations.setdefault(row[0].strip(), set()).add(row[1].strip())
    return AnnotationCorpus(annotations=annotations)


def load_targets(path: str | Path) -> dict[str, set[str]]:
    """TSV of drug-id <tab> target-id rows."""
    targets: dict[str, set[str]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if len(row) >= 2 and row[0].strip():
                targets.setdefault(row[0].strip(), set()).add(row[1].strip())
    return targets


def load_hierarchy_file(path: str | Path) -> OntologyGraph:
    """TSV of child-code <tab> parent-code <tab> level rows."""
    edges: list[tuple[str, str, str]] = []
    with Path(path).open(encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or not row[0].strip():
                continue
            child = row[0].strip()
            parent = row[1].strip() if len(row) > 1 else ""
            level = row[2].strip() if len(row) > 2 else ""
            edges.append((child, parent, level))
    return load_hierarchy_edges(edges)
