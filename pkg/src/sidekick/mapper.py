"""Resolution of extracted clinical terms to ontology identifiers.

Phenotype/disease terms go through a three-stage pipeline: exact label
lookup, embedding retrieval, then LLM disambiguation seeded with graph
context; anything unresolved falls back to the ontology root. Indication
and contraindication terms are first classified into seven categories
(keyword rule for allergy terms, LLM batches of 15 otherwise) and routed
per category. Drug mentions resolve to ingredient-level RxCUIs through
an RxNav-style client with exact-then-approximate lookup.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import gateway as gw
from .embeddings import EmbeddingMatrix, top_k_dedup
from .ontology import OntologyGraph

logger = logging.getLogger(__name__)

HPO_ROOT = "HP:0000001"
MONDO_ROOT = "MONDO:0000001"

ALLERGY_KEYWORDS = ("hypersensitivity", "allergic", "anaphylaxis")

# leading phrases stripped before splitting drug mentions
DEFAULT_STOP_PHRASES = (
    "coadministration with",
    "concomitant use of",
    "use with",
    "combination with",
)

SEMANTIC_TOP_K = 10          # retrieval depth
LLM_CANDIDATES = 5           # candidates shown to the model
CONTEXT_LIMIT = 15           # graph-context nodes in the prompt
MAX_MAPPING_ATTEMPTS = 3     # disambiguation attempts before fallback


class Category(enum.Enum):
    DISEASE = "Disease"
    PHENOTYPE = "Phenotype"
    DRUG_OR_CHEMICAL = "Drug or Chemical"
    ALLERGY_OR_HYPERSENSITIVITY = "Allergy or Hypersensitivity"
    PATIENT_POPULATION = "Patient Population"
    PROCEDURE = "Procedure"
    OTHER = "Other"


@dataclass
class MappingResult:
    surface: str
    target: str
    canonical_name: str
    stage: str                      # exact | semantic | llm | fallback
    score: float | None = None
    attempts: int = 0

    def to_dict(self) -> dict:
        return {
            "surface": self.surface,
            "target": self.target,
            "canonical_name": self.canonical_name,
            "stage": self.stage,
            "score": self.score,
            "attempts": self.attempts,
        }


@dataclass
class DrugResolution:
    surface: str
    entities: list[str]
    rxcuis: list[str]
    group: str                      # resolved | other

    def to_dict(self) -> dict:
        return {
            "surface": self.surface,
            "entities": list(self.entities),
            "rxcuis": list(self.rxcuis),
            "group": self.group,
        }


@dataclass
class RoutedResult:
    """Outcome of category routing for one term."""

    route: str                      # hpo | mondo | drug | unrouted
    mapping: MappingResult | None = None
    resolution: DrugResolution | None = None


class RxNavError(Exception):
    pass


class RxNavClient:
    """Drug-name resolution service interface."""

    def exact_lookup(self, name: str) -> str | None:
        raise NotImplementedError

    def approximate_lookup(self, name: str, max_candidates: int = 10) -> list[str]:
        raise NotImplementedError

    def related_ingredients(self, rxcui: str) -> list[str]:
        """RxCUIs of term type IN related to ``rxcui``."""
        raise NotImplementedError

    def name_of(self, rxcui: str) -> str | None:
        """Concept name for labeling; optional, may return None."""
        return None


class LiveRxNavClient(RxNavClient):
    """Client for the public RxNav REST service."""

    def __init__(self, base_url: str = "https://rxnav.nlm.nih.gov/REST",
                 timeout: float = 30.0, max_retries: int = 3):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries

    def _get(self, path: str, params: dict) -> dict:
        import requests

        last = None
        for _ in range(self.max_retries + 1):
            try:
                resp = requests.get(f"{self.base_url}{path}", params=params,
                                    timeout=self.timeout)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = RxNavError(f"HTTP {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()
            except requests.RequestException as exc:
                last = exc
        raise RxNavError(f"rxnav request failed: {last}")

    def exact_lookup(self, name: str) -> str | None:
        data = self._get("/rxcui.json", {"name": name})
        ids = data.get("idGroup", {}).get("rxnormId") or []
        return ids[0] if ids else None

    def approximate_lookup(self, name: str, max_candidates: int = 10) -> list[str]:
        data = self._get("/approximateTerm.json",
                         {"term": name, "maxEntries": max_candidates})
        out: list[str] = []
        for cand in data.get("approximateGroup", {}).get("candidate", []):
            rxcui = cand.get("rxcui")
            if rxcui and rxcui not in out:
                out.append(rxcui)
        return out[:max_candidates]

    def related_ingredients(self, rxcui: str) -> list[str]:
        data = self._get(f"/rxcui/{rxcui}/related.json", {"tty": "IN"})
        out: list[str] = []
        for group in data.get("relatedGroup", {}).get("conceptGroup", []):
            if group.get("tty") != "IN":
                continue
            for prop in group.get("conceptProperties", []) or []:
                if prop.get("rxcui") and prop["rxcui"] not in out:
                    out.append(prop["rxcui"])
        return out

    def name_of(self, rxcui: str) -> str | None:
        data = self._get(f"/rxcui/{rxcui}/property.json",
                         {"propName": "RxNorm Name"})
        props = data.get("propConceptGroup", {}).get("propConcept", [])
        return props[0].get("propValue") if props else None


class ReplayRxNavClient(RxNavClient):
    """Fixture-backed client: one JSON file keyed by endpoint then query."""

    def __init__(self, path: str | Path):
        self.fixtures = json.loads(Path(path).read_text(encoding="utf-8"))
        self.calls: dict[str, int] = {}

    def _hit(self, endpoint: str, query: str):
        self.calls[endpoint] = self.calls.get(endpoint, 0) + 1
        return self.fixtures.get(endpoint, {}).get(query)

    def exact_lookup(self, name: str) -> str | None:
        return self._hit("rxcui", name.strip().lower())

    def approximate_lookup(self, name: str, max_candidates: int = 10) -> list[str]:
        return (self._hit("approximateTerm", name.strip().lower()) or [])[:max_candidates]

    def related_ingredients(self, rxcui: str) -> list[str]:
        return self._hit("related_ingredients", rxcui) or []

    def name_of(self, rxcui: str) -> str | None:
        return self._hit("name", rxcui)


def default_root_for(graph: OntologyGraph) -> str:
    """Fallback root id for a graph, inferred from its term prefixes."""
    for root in (HPO_ROOT, MONDO_ROOT):
        if root in graph:
            return root
    if graph.roots:
        return min(graph.roots)
    raise ValueError("graph has no root term")


def _fallback(graph: OntologyGraph, root: str, surface: str, attempts: int) -> MappingResult:
    name = graph.terms[root].name if root in graph else ""
    return MappingResult(
        surface=surface, target=root, canonical_name=name,
        stage="fallback", score=None, attempts=attempts,
    )


def map_term(
    term: str,
    graph: OntologyGraph,
    matrix: EmbeddingMatrix,
    query_vec,
    gateway: gw.Gateway,
    fallback_root: str | None = None,
    accept_semantic_score: float | None = None,
) -> MappingResult:
    """Resolve one term against an ontology.

    Stage 1: exact name/synonym lookup (a unique hit resolves, multiple
    hits become score-1.0 candidates for stage 3). Stage 2: cosine
    retrieval of the top 10 rows deduplicated by term id, of which the
    best 5 are offered to the model. Stage 3: LLM disambiguation with
    graph context; the returned id must exist and its name must match the
    canonical name case-insensitively, with up to 3 attempts. Every
    failure path returns a fallback result targeting the ontology root.

    ``accept_semantic_score`` optionally short-circuits stage 3: a top
    candidate at or above the floor is accepted directly (off by default).
    """
    root = fallback_root or default_root_for(graph)

    exact_ids = sorted(graph.lookup_exact(term))
    if len(exact_ids) == 1:
        tid = exact_ids[0]
        return MappingResult(
            surface=term, target=tid, canonical_name=graph.terms[tid].name,
            stage="exact", score=None, attempts=0,
        )

    if exact_ids:
        candidates = [(tid, graph.terms[tid].name, 1.0) for tid in exact_ids]
    elif query_vec is not None:
        retrieved = top_k_dedup(matrix, query_vec, SEMANTIC_TOP_K)
        candidates = [
            (c.term_id, graph.terms[c.term_id].name if c.term_id in graph else c.surface,
             c.score)
            for c in retrieved[:LLM_CANDIDATES]
            if c.term_id in graph
        ]
    else:
        candidates = []

    if not candidates:
        return _fallback(graph, root, term, attempts=0)

    if (
        accept_semantic_score is not None
        and candidates[0][2] >= accept_semantic_score
    ):
        tid, name, score = candidates[0]
        return MappingResult(
            surface=term, target=tid, canonical_name=name,
            stage="semantic", score=score, attempts=0,
        )

    context = [
        (tid, graph.terms[tid].name, tag)
        for tid, tag in graph.related_context([c[0] for c in candidates],
                                              limit=CONTEXT_LIMIT)
    ]
    prompt_candidates = [
        (tid, name, score, graph.terms[tid].definition)
        for tid, name, score in candidates
    ]
    scores = {tid: score for tid, _, score in candidates}

    attempts = 0
    for attempts in range(1, MAX_MAPPING_ATTEMPTS + 1):
        try:
            returned_id, returned_name = gateway.disambiguate(
                term, prompt_candidates, context
            )
        except gw.DisambiguationError as exc:
            logger.warning("disambiguation attempt %d for %r failed: %s",
                           attempts, term, exc)
            continue
        if returned_id not in graph:
            logger.warning("model returned unknown id %s for %r", returned_id, term)
            continue
        canonical = graph.terms[returned_id].name
        if returned_name.strip().lower() != canonical.strip().lower():
            logger.warning("name mismatch for %r: %r != %r",
                           term, returned_name, canonical)
            continue
        return MappingResult(
            surface=term, target=returned_id, canonical_name=canonical,
            stage="llm", score=scores.get(returned_id, 0.0), attempts=attempts,
        )

    return _fallback(graph, root, term, attempts=attempts)


def keyword_category(term: str) -> Category | None:
    """Keyword auto-classification; only allergy terms short-circuit."""
    lowered = term.lower()
    if any(k in lowered for k in ALLERGY_KEYWORDS):
        return Category.ALLERGY_OR_HYPERSENSITIVITY
    return None


def classify_term(term: str, gateway: gw.Gateway) -> Category:
    """Classify a single term (keyword rule first, then a 1-term batch)."""
    if not term.strip():
        raise ValueError("term must be non-empty")
    hit = keyword_category(term)
    if hit is not None:
        return hit
    return gateway.classify([term])[0]


def classify_terms(terms: list[str], gateway: gw.Gateway,
                   batch_size: int = 15) -> list[Category]:
    """Classify many terms, batching the non-keyword ones in arrival order."""
    result: list[Category | None] = [keyword_category(t) for t in terms]
    pending = [i for i, cat in enumerate(result) if cat is None]
    for start in range(0, len(pending), batch_size):
        chunk = pending[start : start + batch_size]
        cats = gateway.classify([terms[i] for i in chunk])
        for i, cat in zip(chunk, cats):
            result[i] = cat
    return [c if c is not None else Category.OTHER for c in result]


def extract_drug_entities(
    text: str,
    ner=None,
    stop_phrases: tuple[str, ...] = DEFAULT_STOP_PHRASES,
) -> list[str]:
    """Pull drug-name candidates out of free text.

    A configured NER callable wins; the fallback heuristic strips leading
    stop phrases and splits on commas, semicolons, slashes and the
    standalone words "and"/"or".
    """
    if ner is not None:
        return [e for e in ner(text) if e.strip()]
    working = text.strip()
    changed = True
    while changed:
        changed = False
        for phrase in stop_phrases:
            if working.lower().startswith(phrase.lower()):
                working = working[len(phrase):].lstrip(" :,-")
                changed = True
    parts = re.split(r",|;|/|\band\b|\bor\b", working, flags=re.IGNORECASE)
    return [p.strip() for p in parts if p.strip()]


def resolve_drug(surface: str, client: RxNavClient, ner=None) -> DrugResolution:
    """Resolve a drug mention to ingredient-level RxCUIs.

    Per extracted entity: exact lookup first; only when that finds
    nothing, the top approximate candidates are tried in order and the
    first one with a non-empty ingredient set wins. Entities whose
    lookups error out are skipped with a warning.
    """
    entities = extract_drug_entities(surface, ner=ner)
    collected: list[str] = []
    for entity in entities:
        try:
            rxcui = client.exact_lookup(entity)
            ingredients: list[str] = []
            if rxcui is not None:
                ingredients = client.related_ingredients(rxcui)
            else:
                for cand in client.approximate_lookup(entity, 10):
                    ingredients = client.related_ingredients(cand)
                    if ingredients:
                        break
            collected.extend(ingredients)
        except RxNavError as exc:
            logger.warning("rxnav resolution failed for %r: %s", entity, exc)
    rxcuis = sorted(set(collected), key=lambda r: (len(r), r))
    return DrugResolution(
        surface=surface,
        entities=entities,
        rxcuis=rxcuis,
        group="resolved" if rxcuis else "other",
    )


@dataclass
class MappingResources:
    """Everything route_mapping needs, bundled once per pipeline run."""

    hpo_graph: OntologyGraph
    hpo_matrix: EmbeddingMatrix
    mondo_graph: OntologyGraph
    mondo_matrix: EmbeddingMatrix
    gateway: gw.Gateway
    rxnav: RxNavClient
    query_vectors: dict[str, object] = field(default_factory=dict)
    ner: object = None

    def query_vector(self, term: str):
        return self.query_vectors.get(term.strip().lower())


def route_mapping(term: str, category: Category,
                  resources: MappingResources) -> RoutedResult:
    """Dispatch a classified term to its target vocabulary.

    Disease -> MONDO, Phenotype -> HPO, Drug or Chemical -> RxNorm;
    the remaining categories are excluded from the graph.
    """
    if category is Category.DISEASE:
        return RoutedResult(
            route="mondo",
            mapping=map_term(
                term, resources.mondo_graph, resources.mondo_matrix,
                resources.query_vector(term), resources.gateway,
                fallback_root=MONDO_ROOT,
            ),
        )
    if category is Category.PHENOTYPE:
        return RoutedResult(
            route="hpo",
            mapping=map_term(
                term, resources.hpo_graph, resources.hpo_matrix,
                resources.query_vector(term), resources.gateway,
                fallback_root=HPO_ROOT,
            ),
        )
    if category is Category.DRUG_OR_CHEMICAL:
        return RoutedResult(
            route="drug",
            resolution=resolve_drug(term, resources.rxnav, ner=resources.ner),
        )
    return RoutedResult(route="unrouted")
