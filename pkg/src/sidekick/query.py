"""Competency queries over a loaded graph via hierarchy closure.

Each question is a union of specs; a spec selects association kinds and
matches targets either inside the transitive closure under a root term
or by substring against the target's ontology label. This is a
purpose-built closure engine, not a general SPARQL evaluator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .kg import (
    ASSOCIATION_KINDS,
    KIND_CLASS_IRIS,
    RDF_TYPE,
    RDFS_LABEL,
    SK_REFERS_TO_DRUG,
    Literal,
    Triple,
    curie_to_iri,
    iri_to_curie,
)
from .ontology import OntologyGraph, TermNotFoundError


@dataclass
class QuerySpec:
    kinds: set[str]
    ontology: str                        # hpo | mondo
    root: str | None = None              # TermId
    label_contains: list[str] = field(default_factory=list)

    def __post_init__(self):
        unknown = self.kinds - set(ASSOCIATION_KINDS)
        if unknown:
            raise ValueError(f"unknown association kinds: {sorted(unknown)}")
        if self.root is None and not self.label_contains:
            raise ValueError("spec needs a root or label substrings")


@dataclass
class Question:
    name: str
    specs: list[QuerySpec]


@dataclass
class Match:
    drug: str
    drug_label: str
    kind: str
    target: str                          # TermId when OBO, else IRI
    target_label: str


@dataclass
class QueryResult:
    drugs: set[tuple[str, str]]
    matches: list[Match]


def _collection_labels(triples) -> dict[str, str]:
    labels: dict[str, str] = {}
    for s, p, o in triples:
        if p == RDFS_LABEL and isinstance(o, Literal):
            labels[s] = o.value
    return labels


def _associations(triples):
    """(node, kind, drug, target) rows for every association in the graph."""
    kinds_by_class = {iri: kind for kind, iri in KIND_CLASS_IRIS.items()}
    node_kind: dict[str, str] = {}
    for s, p, o in triples:
        if p == RDF_TYPE and isinstance(o, str) and o in kinds_by_class:
            node_kind[s] = kinds_by_class[o]

    drugs: dict[str, str] = {}
    targets: dict[str, str] = {}
    for s, p, o in triples:
        if s not in node_kind or not isinstance(o, str):
            continue
        if p == SK_REFERS_TO_DRUG:
            drugs[s] = o
        elif p == ASSOCIATION_KINDS[node_kind[s]].predicate:
            targets[s] = o

    for node, kind in sorted(node_kind.items()):
        if node in drugs and node in targets:
            yield node, kind, drugs[node], targets[node]


def drugs_under(triples, graphs: dict[str, OntologyGraph],
                spec: QuerySpec) -> QueryResult:
    """Drugs whose associations of the requested kinds hit the spec.

    A target matches when it falls in the descendants-or-self closure of
    the root, or when its ontology label contains any of the requested
    substrings (case-insensitive).
    """
    graph = graphs[spec.ontology]
    closure: set[str] | None = None
    if spec.root is not None:
        if spec.root not in graph:
            raise TermNotFoundError(spec.root)
        closure = graph.descendants_or_self(spec.root)

    needles = [s.lower() for s in spec.label_contains]
    labels = _collection_labels(triples)

    matches: list[Match] = []
    for _node, kind, drug, target in _associations(triples):
        if kind not in spec.kinds:
            continue
        curie = iri_to_curie(target)
        target_label = graph.terms[curie].name if curie and curie in graph else ""
        hit = False
        if closure is not None and curie is not None and curie in closure:
            hit = True
        if not hit and needles and target_label:
            lowered = target_label.lower()
            hit = any(n in lowered for n in needles)
        if hit:
            matches.append(Match(
                drug=drug,
                drug_label=labels.get(drug, ""),
                kind=kind,
                target=curie or target,
                target_label=target_label,
            ))

    return QueryResult(
        drugs={(m.drug, m.drug_label) for m in matches},
        matches=matches,
    )


def run_question(triples, graphs, question: Question) -> QueryResult:
    """Union of the question's spec results."""
    drugs: set[tuple[str, str]] = set()
    matches: list[Match] = []
    for spec in question.specs:
        result = drugs_under(triples, graphs, spec)
        drugs |= result.drugs
        matches.extend(result.matches)
    return QueryResult(drugs=drugs, matches=matches)


def run_competency_suite(
    triples, graphs: dict[str, OntologyGraph], questions: list[Question]
) -> list[tuple[str, int, QueryResult]]:
    """One (name, unique-drug count, result) row per question."""
    out = []
    for question in questions:
        result = run_question(triples, graphs, question)
        out.append((question.name, len(result.drugs), result))
    return out


def default_questions(metabolic_root: str = "HP:0001939") -> list[Question]:
    """The six locally answerable benchmark questions."""
    side_effect = {"SideEffect"}
    return [
        Question("cardiovascular_side_effects", [
            QuerySpec(kinds=set(side_effect), ontology="hpo", root="HP:0001626"),
        ]),
        Question("nervous_system_side_effects", [
            QuerySpec(kinds=set(side_effect), ontology="hpo", root="HP:0000707"),
        ]),
        Question("arrhythmia_side_effects", [
            QuerySpec(kinds=set(side_effect), ontology="hpo", root="HP:0011675"),
        ]),
        Question("metabolic_side_effects", [
            QuerySpec(kinds=set(side_effect), ontology="hpo", root=metabolic_root),
        ]),
        Question("kidney_contraindications", [
            QuerySpec(kinds={"PhenotypeContraindication"}, ontology="hpo",
                      root="HP:0000077"),
            QuerySpec(kinds={"DiseaseContraindication"}, ontology="mondo",
                      label_contains=["renal", "kidney"]),
        ]),
        Question("infectious_disease_indications", [
            QuerySpec(kinds={"DiseaseIndication"}, ontology="mondo",
                      root="MONDO:0005550"),
        ]),
    ]


def load_questions(path: str | Path) -> list[Question]:
    """Question config: JSON list of {name, specs:[{kinds, ontology, root?,
    label_contains?}]}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    questions = []
    for entry in data:
        specs = [
            QuerySpec(
                kinds=set(s["kinds"]),
                ontology=s["ontology"],
                root=s.get("root"),
                label_contains=list(s.get("label_contains", [])),
            )
            for s in entry["specs"]
        ]
        questions.append(Question(name=entry["name"], specs=specs))
    return questions


# re-exported for callers building specs from OBO curies
__all__ = [
    "QuerySpec", "Question", "QueryResult", "Match",
    "drugs_under", "run_question", "run_competency_suite",
    "default_questions", "load_questions", "curie_to_iri",
]
