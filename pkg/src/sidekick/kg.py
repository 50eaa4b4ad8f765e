"""Reified RDF knowledge graph: construction, Turtle I/O, validation.

Products link to drug collections (ingredient sets) which carry the
clinical assertions; every assertion is a node of one of seven
association kinds with mandatory document provenance. Serialization is
deterministic (sorted prefixes, subjects, predicates, objects) and
round-trips through the bundled Turtle parser. Shape validation covers
four rule families: structural integrity (1), provenance (2), target
IRI type safety (3), and cardinality (4).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import NamedTuple

SK = "http://sidekick.bio2vec.net/"
SIO = "http://semanticscience.org/resource/"
OBO = "http://purl.obolibrary.org/obo/"
RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
OWL = "http://www.w3.org/2002/07/owl#"
XSD = "http://www.w3.org/2001/XMLSchema#"
DCTERMS = "http://purl.org/dc/terms/"
VOID = "http://rdfs.org/ns/void#"
DEFAULT_RXNORM = "http://purl.bioontology.org/ontology/RXNORM/"

DEFAULT_PREFIXES = {
    "dcterms": DCTERMS,
    "obo": OBO,
    "owl": OWL,
    "rdf": RDF,
    "rdfs": RDFS,
    "rxnorm": DEFAULT_RXNORM,
    "sio": SIO,
    "sk": SK,
    "void": VOID,
    "xsd": XSD,
}

RDF_TYPE = RDF + "type"
RDF_FIRST = RDF + "first"
RDF_REST = RDF + "rest"
RDF_NIL = RDF + "nil"
RDFS_LABEL = RDFS + "label"
RDFS_SUBCLASS = RDFS + "subClassOf"
RDFS_SUBPROP = RDFS + "subPropertyOf"
OWL_CHAIN = OWL + "propertyChainAxiom"

SIO_PHARMACEUTICAL_DRUG = SIO + "SIO_010039"
SIO_COLLECTION = SIO + "SIO_000616"
SIO_ACTIVE_INGREDIENT = SIO + "SIO_010077"
SIO_ASSOCIATION = SIO + "SIO_000897"
SIO_DOCUMENT = SIO + "SIO_000171"
SIO_HAS_PART = SIO + "SIO_000028"
SIO_HAS_MEMBER = SIO + "SIO_000059"
SIO_HAS_SOURCE = SIO + "SIO_000253"
SIO_REFERS_TO = SIO + "SIO_000628"

SK_DRUG_COLLECTION = SK + "DrugCollection"
SK_REFERS_TO_DRUG = SK + "refersToDrug"
SK_DATASET = SK + "dataset"

HPO_IRI_RE = re.compile(r"^http://purl\.obolibrary\.org/obo/HP_\d{7}$")
MONDO_IRI_RE = re.compile(r"^http://purl\.obolibrary\.org/obo/MONDO_\d{7}$")


class KindSpec(NamedTuple):
    predicate: str       # full predicate IRI
    target: str          # hpo | mondo | collection
    phrase: str          # label wording


ASSOCIATION_KINDS: dict[str, KindSpec] = {
    "SideEffect": KindSpec(SK + "hasSideEffect", "hpo", "has side effect"),
    "DiseaseIndication": KindSpec(
        SK + "isIndicatedForDisease", "mondo", "is indicated for disease"),
    "PhenotypeIndication": KindSpec(
        SK + "isIndicatedForPhenotype", "hpo", "is indicated for phenotype"),
    "DrugIndication": KindSpec(
        SK + "isIndicatedWithDrug", "collection", "is indicated with drug"),
    "DiseaseContraindication": KindSpec(
        SK + "isContraindicatedInDisease", "mondo", "is contraindicated in disease"),
    "PhenotypeContraindication": KindSpec(
        SK + "isContraindicatedInPhenotype", "hpo",
        "is contraindicated in phenotype"),
    "DrugContraindication": KindSpec(
        SK + "isContraindicatedWithDrug", "collection",
        "is contraindicated with drug"),
}

KIND_CLASS_IRIS = {kind: SK + kind for kind in ASSOCIATION_KINDS}

RULE_STRUCTURE = 1
RULE_PROVENANCE = 2
RULE_TYPE_SAFETY = 3
RULE_CARDINALITY = 4


class BuildError(ValueError):
    """Graph inputs reference undeclared nodes or violate kind patterns."""


class TurtleParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}")


@dataclass(frozen=True)
class Literal:
    value: str
    datatype: str | None = None
    lang: str | None = None


class Triple(NamedTuple):
    subject: str
    predicate: str
    object: "str | Literal"


def validate_iri(iri: str) -> str:
    if not iri or any(c.isspace() for c in iri) or "<" in iri or ">" in iri:
        raise ValueError(f"invalid IRI: {iri!r}")
    return iri


def curie_to_iri(curie: str) -> str:
    """OBO-style CURIE (HP:0001626) to its OBO PURL."""
    prefix, _, local = curie.partition(":")
    return f"{OBO}{prefix}_{local}"


def iri_to_curie(iri: str) -> str | None:
    if iri.startswith(OBO):
        local = iri[len(OBO):]
        prefix, _, rest = local.partition("_")
        if prefix and rest:
            return f"{prefix}:{rest}"
    return None


def local_name(iri: str) -> str:
    for sep in ("#", "/"):
        if sep in iri:
            return iri.rsplit(sep, 1)[1]
    return iri


def mint_collection_iri(rxcuis: list[str], namespace: str = SK) -> str:
    """Deterministic ingredient-set IRI from ingredient RxCUIs.

    The ids are sorted numerically, so any ordering of the same set mints
    the identical IRI; duplicates and non-numeric ids are rejected.
    """
    if not rxcuis:
        raise ValueError("rxcui list must be non-empty")
    for rxcui in rxcuis:
        if not re.fullmatch(r"\d+", str(rxcui)):
            raise ValueError(f"non-numeric rxcui: {rxcui!r}")
    values = [str(r) for r in rxcuis]
    if len(set(values)) != len(values):
        raise ValueError(f"duplicate rxcuis in {values}")
    ordered = sorted(values, key=int)
    return namespace + "ingredient_set_" + "_".join(ordered)


@dataclass
class ProductNode:
    rxcui: str
    label: str
    collections: list[str] = field(default_factory=list)  # collection IRIs

    def iri(self, rxnorm_prefix: str = DEFAULT_RXNORM) -> str:
        return rxnorm_prefix + self.rxcui


@dataclass
class DrugCollectionNode:
    iri: str
    member_rxcuis: list[str]
    label: str

    @classmethod
    def from_members(cls, rxcuis: list[str], label: str | None = None,
                     namespace: str = SK) -> "DrugCollectionNode":
        iri = mint_collection_iri(rxcuis, namespace)
        members = sorted({str(r) for r in rxcuis}, key=int)
        return cls(iri=iri, member_rxcuis=members, label=label or local_name(iri))

    def __post_init__(self):
        if not self.member_rxcuis:
            raise ValueError("collection must have members")
        keys = [int(r) for r in self.member_rxcuis]
        if keys != sorted(set(keys)):
            raise ValueError("member_rxcuis must be strictly ascending")


@dataclass
class DocumentNode:
    set_id: str
    label: str | None = None

    @property
    def iri(self) -> str:
        return SK + "document_" + self.set_id


@dataclass
class AssociationNode:
    kind: str
    drug: str                 # collection IRI
    target: str               # HPO/MONDO/collection IRI
    sources: list[str]        # document IRIs
    target_label: str | None = None

    def __post_init__(self):
        if self.kind not in ASSOCIATION_KINDS:
            raise ValueError(f"unknown association kind {self.kind!r}")
        if not self.sources:
            raise BuildError(f"association to {self.target} has no sources")
        for iri in (self.drug, self.target, *self.sources):
            validate_iri(iri)

    @property
    def iri(self) -> str:
        return SK + f"{self.kind}_{local_name(self.drug)}_{local_name(self.target)}"


@dataclass
class DatasetMetadata:
    description: str
    created: str              # ISO date
    creator: str
    license: str
    title: str | None = None


def _target_matches(kind: str, target: str) -> bool:
    expected = ASSOCIATION_KINDS[kind].target
    if expected == "hpo":
        return bool(HPO_IRI_RE.match(target))
    if expected == "mondo":
        return bool(MONDO_IRI_RE.match(target))
    return target.startswith(SK + "ingredient_set_")


def schema_triples() -> set[Triple]:
    """Class/property declarations shared by every build."""
    triples: set[Triple] = {
        Triple(SK_DRUG_COLLECTION, RDFS_SUBCLASS, SIO_COLLECTION),
        Triple(SK_DRUG_COLLECTION, RDFS_LABEL, Literal("drug collection")),
        Triple(SK_REFERS_TO_DRUG, RDFS_SUBPROP, SIO_REFERS_TO),
        Triple(SK_REFERS_TO_DRUG, RDFS_LABEL, Literal("refers to drug")),
        # has part o has member -> has part, as an OWL chain over IRI-named
        # list nodes (the graph stays free of blank nodes)
        Triple(SIO_HAS_PART, OWL_CHAIN, SK + "hasPartMemberChain"),
        Triple(SK + "hasPartMemberChain", RDF_FIRST, SIO_HAS_PART),
        Triple(SK + "hasPartMemberChain", RDF_REST, SK + "hasPartMemberChain_1"),
        Triple(SK + "hasPartMemberChain_1", RDF_FIRST, SIO_HAS_MEMBER),
        Triple(SK + "hasPartMemberChain_1", RDF_REST, RDF_NIL),
    }
    for kind, spec in ASSOCIATION_KINDS.items():
        kind_iri = KIND_CLASS_IRIS[kind]
        words = re.sub(r"(?<!^)(?=[A-Z])", " ", kind).lower()
        triples.add(Triple(kind_iri, RDFS_SUBCLASS, SIO_ASSOCIATION))
        triples.add(Triple(kind_iri, RDFS_LABEL, Literal(words)))
        triples.add(Triple(spec.predicate, RDFS_LABEL, Literal(spec.phrase)))
    return triples


def metadata_triples(metadata: DatasetMetadata) -> set[Triple]:
    triples = {
        Triple(SK_DATASET, DCTERMS + "description", Literal(metadata.description)),
        Triple(SK_DATASET, DCTERMS + "created",
               Literal(metadata.created, datatype=XSD + "date")),
        Triple(SK_DATASET, DCTERMS + "creator", Literal(metadata.creator)),
    }
    if metadata.license.startswith("http"):
        triples.add(Triple(SK_DATASET, DCTERMS + "license", metadata.license))
    else:
        triples.add(Triple(SK_DATASET, DCTERMS + "license", Literal(metadata.license)))
    if metadata.title:
        triples.add(Triple(SK_DATASET, DCTERMS + "title", Literal(metadata.title)))
    return triples


def build_graph(
    products: list[ProductNode],
    collections: list[DrugCollectionNode],
    associations: list[AssociationNode],
    metadata: DatasetMetadata,
    documents: list[DocumentNode] | None = None,
    ingredient_labels: dict[str, str] | None = None,
    rxnorm_prefix: str = DEFAULT_RXNORM,
) -> set[Triple]:
    """Assemble the full triple set for the dataset.

    All association drug references and collection-valued targets must
    resolve to declared collections, and sources to declared documents
    (documents default to exactly the set referenced by associations).
    """
    ingredient_labels = ingredient_labels or {}
    collection_iris = {c.iri for c in collections}

    if documents is None:
        seen: list[str] = []
        for assoc in associations:
            for src in assoc.sources:
                if src not in seen:
                    seen.append(src)
        documents = [DocumentNode(set_id=local_name(s).removeprefix("document_"))
                     for s in seen]
    document_iris = {d.iri for d in documents}

    triples = schema_triples() | metadata_triples(metadata)

    ingredients: dict[str, str] = {}
    for coll in collections:
        triples.add(Triple(coll.iri, RDF_TYPE, SK_DRUG_COLLECTION))
        triples.add(Triple(coll.iri, RDFS_LABEL, Literal(coll.label)))
        for rxcui in coll.member_rxcuis:
            ingredient_iri = rxnorm_prefix + rxcui
            ingredients[ingredient_iri] = ingredient_labels.get(
                rxcui, f"RxCUI {rxcui}")
            triples.add(Triple(coll.iri, SIO_HAS_MEMBER, ingredient_iri))

    for ingredient_iri, label in ingredients.items():
        triples.add(Triple(ingredient_iri, RDF_TYPE, SIO_ACTIVE_INGREDIENT))
        triples.add(Triple(ingredient_iri, RDFS_LABEL, Literal(label)))

    for product in products:
        iri = product.iri(rxnorm_prefix)
        triples.add(Triple(iri, RDF_TYPE, SIO_PHARMACEUTICAL_DRUG))
        triples.add(Triple(iri, RDFS_LABEL, Literal(product.label)))
        for coll_iri in product.collections:
            if coll_iri not in collection_iris:
                raise BuildError(
                    f"product {product.rxcui} references undeclared collection "
                    f"{coll_iri}")
            triples.add(Triple(iri, SIO_HAS_PART, coll_iri))

    for doc in documents:
        triples.add(Triple(doc.iri, RDF_TYPE, SIO_DOCUMENT))
        triples.add(Triple(doc.iri, RDFS_LABEL, Literal(doc.label or doc.set_id)))

    labels_by_iri = {c.iri: c.label for c in collections}
    for assoc in associations:
        if assoc.drug not in collection_iris:
            raise BuildError(f"association drug {assoc.drug} is not declared")
        if not _target_matches(assoc.kind, assoc.target):
            raise BuildError(
                f"{assoc.kind} target {assoc.target} violates the kind pattern")
        if ASSOCIATION_KINDS[assoc.kind].target == "collection" \
                and assoc.target not in collection_iris:
            raise BuildError(
                f"association target collection {assoc.target} is not declared")
        for src in assoc.sources:
            if src not in document_iris:
                raise BuildError(f"association source {src} is not declared")

        spec = ASSOCIATION_KINDS[assoc.kind]
        target_label = assoc.target_label or local_name(assoc.target)
        label = f"{labels_by_iri[assoc.drug]} {spec.phrase} {target_label}"
        triples.add(Triple(assoc.iri, RDF_TYPE, KIND_CLASS_IRIS[assoc.kind]))
        triples.add(Triple(assoc.iri, RDFS_LABEL, Literal(label)))
        triples.add(Triple(assoc.iri, SK_REFERS_TO_DRUG, assoc.drug))
        triples.add(Triple(assoc.iri, spec.predicate, assoc.target))
        for src in assoc.sources:
            triples.add(Triple(assoc.iri, SIO_HAS_SOURCE, src))

    return triples


# --- Turtle serialization ---------------------------------------------------

_PN_LOCAL_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")


def _escape_literal(value: str) -> str:
    out = []
    for ch in value:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def _render_iri(iri: str, prefixes: dict[str, str]) -> str:
    best: tuple[str, str] | None = None
    for prefix, ns in prefixes.items():
        if iri.startswith(ns) and (best is None or len(ns) > len(best[1])):
            best = (prefix, ns)
    if best is not None:
        local = iri[len(best[1]):]
        if local and _PN_LOCAL_RE.match(local) and not local.endswith("."):
            return f"{best[0]}:{local}"
    return f"<{iri}>"


def _render_object(obj, prefixes: dict[str, str]) -> str:
    if isinstance(obj, Literal):
        body = f'"{_escape_literal(obj.value)}"'
        if obj.lang:
            return f"{body}@{obj.lang}"
        if obj.datatype:
            return f"{body}^^{_render_iri(obj.datatype, prefixes)}"
        return body
    return _render_iri(obj, prefixes)


def _object_sort_key(obj):
    if isinstance(obj, Literal):
        return (1, obj.value, obj.datatype or "", obj.lang or "")
    return (0, obj, "", "")


def serialize_turtle(triples: set[Triple] | list[Triple],
                     prefixes: dict[str, str] | None = None) -> str:
    """Deterministic Turtle: sorted prefixes, subjects, predicates, objects."""
    prefixes = prefixes or DEFAULT_PREFIXES
    lines = [f"@prefix {p}: <{ns}> ." for p, ns in sorted(prefixes.items())]

    by_subject: dict[str, dict[str, list]] = {}
    for triple in triples:
        by_subject.setdefault(triple.subject, {}).setdefault(
            triple.predicate, []).append(triple.object)

    for subject in sorted(by_subject):
        lines.append("")
        preds = by_subject[subject]
        # rdf:type renders as 'a' and leads; other predicates sort by IRI
        ordered = sorted(preds, key=lambda p: (p != RDF_TYPE, p))
        parts = []
        for pred in ordered:
            objs = sorted(preds[pred], key=_object_sort_key)
            rendered = ", ".join(_render_object(o, prefixes) for o in objs)
            pname = "a" if pred == RDF_TYPE else _render_iri(pred, prefixes)
            parts.append(f"{pname} {rendered}")
        subject_str = _render_iri(subject, prefixes)
        body = " ;\n    ".join(parts)
        lines.append(f"{subject_str} {body} .")

    return "\n".join(lines) + "\n"


# --- Turtle parsing ----------------------------------------------------------


class _Token(NamedTuple):
    kind: str      # iri pname string langtag typemark punct number bool a
    value: object
    line: int
    col: int


def _tokenize(text: str):
    i, line, col = 0, 1, 1
    n = len(text)

    def error(msg):
        raise TurtleParseError(msg, line, col)

    def advance(k=1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            advance()
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                advance()
            continue
        start_line, start_col = line, col
        if ch == "<":
            j = text.find(">", i + 1)
            if j == -1:
                error("unterminated IRI")
            raw = text[i + 1 : j]
            raw = re.sub(r"\\u([0-9A-Fa-f]{4})",
                         lambda m: chr(int(m.group(1), 16)), raw)
            yield _Token("iri", raw, start_line, start_col)
            advance(j - i + 1)
            continue
        if ch == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\\":
                    if j + 1 >= n:
                        error("dangling escape")
                    esc = text[j + 1]
                    mapping = {"n": "\n", "r": "\r", "t": "\t", '"': '"',
                               "\\": "\\", "b": "\b", "f": "\f", "'": "'"}
                    if esc in mapping:
                        out.append(mapping[esc])
                        j += 2
                    elif esc == "u":
                        out.append(chr(int(text[j + 2 : j + 6], 16)))
                        j += 6
                    elif esc == "U":
                        out.append(chr(int(text[j + 2 : j + 10], 16)))
                        j += 10
                    else:
                        error(f"unknown escape \\{esc}")
                elif text[j] == "\n":
                    error("newline in single-line literal")
                else:
                    out.append(text[j])
                    j += 1
            if j >= n:
                error("unterminated string literal")
            yield _Token("string", "".join(out), start_line, start_col)
            advance(j - i + 1)
            continue
        if ch == "@":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "-"):
                j += 1
            word = text[i + 1 : j]
            if word in ("prefix", "base"):
                yield _Token("directive", word, start_line, start_col)
            else:
                yield _Token("langtag", word, start_line, start_col)
            advance(j - i)
            continue
        if text.startswith("^^", i):
            yield _Token("typemark", "^^", start_line, start_col)
            advance(2)
            continue
        if ch in ".;,":
            yield _Token("punct", ch, start_line, start_col)
            advance()
            continue
        if ch.isdigit() or (ch in "+-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and (text[j].isdigit() or text[j] in ".eE+-"):
                j += 1
            token = text[i:j]
            while token and token.endswith("."):
                # trailing dot is the statement terminator
                token = token[:-1]
                j -= 1
            yield _Token("number", token, start_line, start_col)
            advance(j - i)
            continue
        # PNAME or bare keyword
        j = i
        while j < n and (text[j].isalnum() or text[j] in "_-.:%"):
            j += 1
        word = text[i:j]
        while word.endswith("."):
            word = word[:-1]
            j -= 1
        if not word:
            error(f"unexpected character {ch!r}")
        if word == "a":
            yield _Token("a", "a", start_line, start_col)
        elif word in ("true", "false"):
            yield _Token("bool", word, start_line, start_col)
        elif word.upper() in ("PREFIX", "BASE") and ":" not in word:
            yield _Token("directive", word.lower(), start_line, start_col)
        elif ":" in word:
            yield _Token("pname", word, start_line, start_col)
        else:
            error(f"unexpected token {word!r}")
        advance(j - i)


def parse_turtle(text: str) -> set[Triple]:
    """Parse the supported Turtle subset into a triple set.

    Handles prefix directives, prefixed names, IRIs, plain/typed/tagged
    string literals, bare numbers and booleans, ``a``, and object/
    predicate lists. No blank nodes or collections."""
    tokens = list(_tokenize(text))
    prefixes: dict[str, str] = {}
    triples: set[Triple] = set()
    pos = 0

    def error(msg, tok=None):
        if tok is not None:
            raise TurtleParseError(msg, tok.line, tok.col)
        raise TurtleParseError(msg, 0, 0)

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(kind=None, value=None):
        nonlocal pos
        tok = peek()
        if tok is None:
            error("unexpected end of input", tokens[-1] if tokens else None)
        if kind and tok.kind != kind:
            error(f"expected {kind}, got {tok.kind} {tok.value!r}", tok)
        if value is not None and tok.value != value:
            error(f"expected {value!r}, got {tok.value!r}", tok)
        pos += 1
        return tok

    def resolve_pname(tok) -> str:
        prefix, _, local = tok.value.partition(":")
        if prefix not in prefixes:
            error(f"undeclared prefix {prefix!r}", tok)
        return prefixes[prefix] + local

    def parse_node(tok) -> str:
        if tok.kind == "iri":
            return tok.value
        if tok.kind == "pname":
            return resolve_pname(tok)
        error(f"expected IRI or prefixed name, got {tok.kind}", tok)

    def parse_object():
        tok = take()
        if tok.kind in ("iri", "pname"):
            return parse_node(tok)
        if tok.kind == "string":
            nxt = peek()
            if nxt and nxt.kind == "langtag":
                take()
                return Literal(tok.value, lang=nxt.value)
            if nxt and nxt.kind == "typemark":
                take()
                dtok = take()
                return Literal(tok.value, datatype=parse_node(dtok))
            return Literal(tok.value)
        if tok.kind == "number":
            text_val = str(tok.value)
            if re.fullmatch(r"[+-]?\d+", text_val):
                return Literal(text_val, datatype=XSD + "integer")
            if "e" in text_val.lower():
                return Literal(text_val, datatype=XSD + "double")
            return Literal(text_val, datatype=XSD + "decimal")
        if tok.kind == "bool":
            return Literal(tok.value, datatype=XSD + "boolean")
        error(f"expected object, got {tok.kind} {tok.value!r}", tok)

    while pos < len(tokens):
        tok = peek()
        if tok.kind == "directive":
            take()
            if tok.value == "base":
                error("@base is not supported", tok)
            ptok = take("pname")
            if not ptok.value.endswith(":"):
                error("prefix declaration must end with ':'", ptok)
            iri_tok = take("iri")
            prefixes[ptok.value[:-1]] = iri_tok.value
            nxt = peek()
            if nxt and nxt.kind == "punct" and nxt.value == ".":
                take()
            continue

        subject = parse_node(take())
        while True:
            ptok = take()
            if ptok.kind == "a":
                predicate = RDF_TYPE
            else:
                predicate = parse_node(ptok)
            while True:
                triples.add(Triple(subject, predicate, parse_object()))
                nxt = peek()
                if nxt and nxt.kind == "punct" and nxt.value == ",":
                    take()
                    continue
                break
            nxt = peek()
            if nxt and nxt.kind == "punct" and nxt.value == ";":
                take()
                # tolerate trailing ';' before '.'
                nxt = peek()
                if nxt and nxt.kind == "punct" and nxt.value == ".":
                    take()
                    break
                continue
            take("punct", ".")
            break

    return triples


# --- VOID metadata -----------------------------------------------------------


def emit_void(stats: "GraphStats", metadata: DatasetMetadata) -> str:
    """Dataset-level VOID descriptor as Turtle."""
    triples = metadata_triples(metadata)
    triples.add(Triple(SK_DATASET, RDF_TYPE, VOID + "Dataset"))
    triples.add(Triple(SK_DATASET, VOID + "triples",
                       Literal(str(stats.total_triples), datatype=XSD + "integer")))
    triples.add(Triple(SK_DATASET, VOID + "distinctSubjects",
                       Literal(str(stats.distinct_subjects),
                               datatype=XSD + "integer")))
    return serialize_turtle(triples)


# --- Shape validation ---------------------------------------------------------


@dataclass
class Violation:
    node: str
    rule: int
    message: str

    def to_dict(self) -> dict:
        return {"node": self.node, "rule": self.rule, "message": self.message}


@dataclass
class ValidationReport:
    violations: list[Violation]
    checked_associations: int
    checked_collections: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checked_associations": self.checked_associations,
            "checked_collections": self.checked_collections,
            "violations": [v.to_dict() for v in self.violations],
        }


class _Index:
    def __init__(self, triples):
        self.by_type: dict[str, set[str]] = {}
        self.spo: dict[tuple[str, str], list] = {}
        for s, p, o in triples:
            self.spo.setdefault((s, p), []).append(o)
            if p == RDF_TYPE and isinstance(o, str):
                self.by_type.setdefault(o, set()).add(s)

    def objects(self, subject: str, predicate: str) -> list:
        return self.spo.get((subject, predicate), [])

    def typed(self, class_iri: str) -> set[str]:
        return self.by_type.get(class_iri, set())


def validate_shapes(triples: set[Triple] | list[Triple]) -> ValidationReport:
    """Check every association and collection against the shape rules.

    Rule families: 1 structural integrity (drug reference resolves to a
    typed collection; collections are non-empty), 2 provenance (at least
    one source pointing to a declared document), 3 ontology type safety
    (the kind's target predicate object matches the kind's IRI pattern),
    4 cardinality (exactly one drug reference and one target).
    """
    index = _Index(triples)
    violations: list[Violation] = []
    collections = index.typed(SK_DRUG_COLLECTION)
    documents = index.typed(SIO_DOCUMENT)

    associations: set[str] = set()
    for kind, class_iri in KIND_CLASS_IRIS.items():
        spec = ASSOCIATION_KINDS[kind]
        for node in sorted(index.typed(class_iri)):
            associations.add(node)

            drugs = index.objects(node, SK_REFERS_TO_DRUG)
            if len(drugs) != 1:
                violations.append(Violation(
                    node, RULE_CARDINALITY,
                    f"expected exactly one refersToDrug, found {len(drugs)}"))
            elif drugs[0] not in collections:
                violations.append(Violation(
                    node, RULE_STRUCTURE,
                    f"refersToDrug {drugs[0]} is not a declared drug collection"))

            sources = index.objects(node, SIO_HAS_SOURCE)
            if not sources:
                violations.append(Violation(
                    node, RULE_PROVENANCE, "association has no source document"))
            else:
                for src in sources:
                    if src not in documents:
                        violations.append(Violation(
                            node, RULE_PROVENANCE,
                            f"source {src} is not a declared document"))

            targets = index.objects(node, spec.predicate)
            if len(targets) != 1:
                violations.append(Violation(
                    node, RULE_CARDINALITY,
                    f"expected exactly one {local_name(spec.predicate)}, "
                    f"found {len(targets)}"))
            else:
                target = targets[0]
                if not isinstance(target, str) or not _target_matches(kind, target):
                    violations.append(Violation(
                        node, RULE_TYPE_SAFETY,
                        f"target {target} does not match the {kind} pattern"))

    for coll in sorted(collections):
        if not index.objects(coll, SIO_HAS_MEMBER):
            violations.append(Violation(
                coll, RULE_STRUCTURE, "collection has no members"))

    return ValidationReport(
        violations=violations,
        checked_associations=len(associations),
        checked_collections=len(collections),
    )


# --- Statistics ---------------------------------------------------------------


@dataclass
class GraphStats:
    total_triples: int
    distinct_subjects: int
    products: int
    collections: int
    ingredients: int
    documents: int
    associations: dict[str, int]
    total_associations: int
    unique_hpo_terms: int
    unique_mondo_terms: int
    unique_rxnorm_ingredients: int

    def to_dict(self) -> dict:
        return {
            "total_triples": self.total_triples,
            "distinct_subjects": self.distinct_subjects,
            "products": self.products,
            "collections": self.collections,
            "ingredients": self.ingredients,
            "documents": self.documents,
            "associations": dict(sorted(self.associations.items())),
            "total_associations": self.total_associations,
            "unique_hpo_terms": self.unique_hpo_terms,
            "unique_mondo_terms": self.unique_mondo_terms,
            "unique_rxnorm_ingredients": self.unique_rxnorm_ingredients,
        }


def compute_stats(triples: set[Triple] | list[Triple]) -> GraphStats:
    """Tally node counts by type, per-kind associations, and term coverage."""
    index = _Index(triples)
    per_kind = {kind: len(index.typed(KIND_CLASS_IRIS[kind]))
                for kind in ASSOCIATION_KINDS}

    hpo_terms: set[str] = set()
    mondo_terms: set[str] = set()
    for kind, spec in ASSOCIATION_KINDS.items():
        for node in index.typed(KIND_CLASS_IRIS[kind]):
            for target in index.objects(node, spec.predicate):
                if isinstance(target, str):
                    if HPO_IRI_RE.match(target):
                        hpo_terms.add(target)
                    elif MONDO_IRI_RE.match(target):
                        mondo_terms.add(target)

    members: set[str] = set()
    for (s, p), objs in index.spo.items():
        if p == SIO_HAS_MEMBER:
            members.update(o for o in objs if isinstance(o, str))

    return GraphStats(
        total_triples=len(set(triples)),
        distinct_subjects=len({t.subject for t in triples}),
        products=len(index.typed(SIO_PHARMACEUTICAL_DRUG)),
        collections=len(index.typed(SK_DRUG_COLLECTION)),
        ingredients=len(index.typed(SIO_ACTIVE_INGREDIENT)),
        documents=len(index.typed(SIO_DOCUMENT)),
        associations=per_kind,
        total_associations=sum(per_kind.values()),
        unique_hpo_terms=len(hpo_terms),
        unique_mondo_terms=len(mondo_terms),
        unique_rxnorm_ingredients=len(members),
    )


def write_stats(stats: GraphStats, path) -> None:
    from pathlib import Path

    Path(path).write_text(
        json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
