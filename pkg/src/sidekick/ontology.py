"""In-memory ontology graphs parsed from OBO flat files.

Handles the subset of OBO needed downstream: ``[Term]`` stanzas with
``id``, ``name``, ``def``, ``synonym``, ``is_a`` and ``is_obsolete`` tags.
Edges follow the OBO convention (``is_a`` points from child to parent), the
graph is a DAG (multiple parents allowed, cycles rejected at load), and a
lowercased label index covers primary names and synonyms of live terms.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field

TERM_ID_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*:[A-Za-z0-9_.]+$")

# relation tags emitted by related_context
PARENT, CHILD, SIBLING = "parent", "child", "sibling"


class OboParseError(ValueError):
    """Malformed OBO input (carries a 1-based line number when known)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CycleError(ValueError):
    """The is_a edge set contains a cycle; names one participating term."""

    def __init__(self, term_id: str):
        self.term_id = term_id
        super().__init__(f"is_a cycle detected through {term_id}")


class TermNotFoundError(KeyError):
    def __init__(self, term_id: str):
        self.term_id = term_id
        super().__init__(f"unknown term: {term_id}")


def is_term_id(value: str) -> bool:
    """True if ``value`` is a CURIE of the form PREFIX:LOCALID."""
    return bool(TERM_ID_RE.match(value))


@dataclass
class OntologyTerm:
    """One ontology class: identifier, labels, and parent links."""

    id: str
    name: str
    definition: str | None = None
    synonyms: list[str] = field(default_factory=list)
    parents: list[str] = field(default_factory=list)
    obsolete: bool = False
    metadata: dict[str, str] = field(default_factory=dict)


class OntologyGraph:
    """Immutable-after-construction DAG of terms with label indexing.

    ``terms`` maps term id to :class:`OntologyTerm`; ``children_index`` is
    the exact inverse of the parents relation; ``label_index`` maps
    lowercased names/synonyms of live terms to the ids carrying them;
    ``roots`` holds the ids with no parents.
    """

    def __init__(self, terms: dict[str, OntologyTerm]):
        self.terms = terms
        self.children_index: dict[str, set[str]] = {tid: set() for tid in terms}
        self.label_index: dict[str, set[str]] = {}
        self.roots: set[str] = set()

        for term in terms.values():
            for parent in term.parents:
                if parent not in terms:
                    raise OboParseError(
                        f"term {term.id} references unknown parent {parent}"
                    )
                self.children_index[parent].add(term.id)
            if not term.parents:
                self.roots.add(term.id)
            if not term.obsolete:
                for label in [term.name, *term.synonyms]:
                    key = label.strip().lower()
                    if key:
                        self.label_index.setdefault(key, set()).add(term.id)

        self._check_acyclic()

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def _check_acyclic(self) -> None:
        # iterative three-color DFS over is_a edges
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {tid: WHITE for tid in self.terms}
        for start in self.terms:
            if color[start] != WHITE:
                continue
            stack: list[tuple[str, int]] = [(start, 0)]
            color[start] = GRAY
            while stack:
                node, idx = stack[-1]
                parents = self.terms[node].parents
                if idx < len(parents):
                    stack[-1] = (node, idx + 1)
                    nxt = parents[idx]
                    if color[nxt] == GRAY:
                        raise CycleError(nxt)
                    if color[nxt] == WHITE:
                        color[nxt] = GRAY
                        stack.append((nxt, 0))
                else:
                    color[node] = BLACK
                    stack.pop()

    def _require(self, term_id: str) -> OntologyTerm:
        try:
            return self.terms[term_id]
        except KeyError:
            raise TermNotFoundError(term_id) from None

    def ancestors_or_self(self, term_id: str) -> set[str]:
        """Transitive is_a closure of ``term_id``, including itself."""
        self._require(term_id)
        seen = {term_id}
        queue = deque([term_id])
        while queue:
            for parent in self.terms[queue.popleft()].parents:
                if parent not in seen:
                    seen.add(parent)
                    queue.append(parent)
        return seen

    def descendants_or_self(self, term_id: str) -> set[str]:
        """Inverse transitive closure of ``term_id``, including itself."""
        self._require(term_id)
        seen = {term_id}
        queue = deque([term_id])
        while queue:
            for child in self.children_index[queue.popleft()]:
                if child not in seen:
                    seen.add(child)
                    queue.append(child)
        return seen

    def related_context(
        self, seeds: list[str], limit: int = 15
    ) -> list[tuple[str, str]]:
        """Collect (term id, relation tag) context around ``seeds``.

        Parents of all seeds come first, then children, then siblings
        (children of any seed parent), each group traversed in seed order
        with deterministic ordering inside a group. Seeds themselves and
        obsolete terms are excluded; the result is deduplicated (first
        relation tag wins) and truncated at ``limit`` entries.
        """
        if not seeds:
            raise ValueError("seeds must be non-empty")
        if limit < 1:
            raise ValueError("limit must be >= 1")
        for seed in seeds:
            self._require(seed)

        seed_set = set(seeds)
        out: list[tuple[str, str]] = []
        seen: set[str] = set()

        def add(term_id: str, tag: str) -> None:
            if term_id in seed_set or term_id in seen:
                return
            if self.terms[term_id].obsolete:
                return
            seen.add(term_id)
            out.append((term_id, tag))

        for seed in seeds:
            for parent in self.terms[seed].parents:
                add(parent, PARENT)
        for seed in seeds:
            for child in sorted(self.children_index[seed]):
                add(child, CHILD)
        for seed in seeds:
            for parent in self.terms[seed].parents:
                for sibling in sorted(self.children_index[parent]):
                    add(sibling, SIBLING)

        return out[:limit]

    def lookup_exact(self, label: str) -> set[str]:
        """Ids whose name or synonym equals ``label`` (case/space-insensitive)."""
        return set(self.label_index.get(label.strip().lower(), set()))


def _first_quoted(value: str) -> str | None:
    match = re.search(r'"((?:[^"\\]|\\.)*)"', value)
    if match is None:
        return None
    return match.group(1).replace('\\"', '"').replace("\\\\", "\\")


def parse_obo(text: str) -> OntologyGraph:
    """Parse an OBO document into an :class:`OntologyGraph`.

    Only ``[Term]`` stanzas are interpreted; other stanza types and
    unrecognized tags are skipped. ``is_a`` targets are the token before
    any ``!`` comment; synonyms and definitions take the first quoted span.
    """
    terms: dict[str, OntologyTerm] = {}
    current: dict | None = None
    stanza_line = 0
    in_term = False

    def flush() -> None:
        nonlocal current
        if current is None:
            return
        if current["id"] is None:
            raise OboParseError("[Term] stanza missing id", stanza_line)
        if not current["obsolete"] and not current["name"]:
            raise OboParseError(
                f"term {current['id']} has no name", stanza_line
            )
        if current["id"] in terms:
            raise OboParseError(
                f"duplicate term id {current['id']}", stanza_line
            )
        parents: list[str] = []
        for parent in current["parents"]:
            if parent == current["id"]:
                raise CycleError(parent)
            if parent not in parents:
                parents.append(parent)
        terms[current["id"]] = OntologyTerm(
            id=current["id"],
            name=current["name"] or "",
            definition=current["definition"],
            synonyms=current["synonyms"],
            parents=parents,
            obsolete=current["obsolete"],
        )
        current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            flush()
            in_term = line == "[Term]"
            if in_term:
                stanza_line = lineno
                current = {
                    "id": None,
                    "name": None,
                    "definition": None,
                    "synonyms": [],
                    "parents": [],
                    "obsolete": False,
                }
            continue
        if not in_term or current is None or not line or line.startswith("!"):
            continue

        tag, _, value = line.partition(":")
        value = value.strip()
        tag = tag.strip()
        if tag == "id":
            if not is_term_id(value):
                raise OboParseError(f"invalid term id {value!r}", lineno)
            current["id"] = value
        elif tag == "name":
            current["name"] = value
        elif tag == "def":
            current["definition"] = _first_quoted(value)
        elif tag == "synonym":
            syn = _first_quoted(value)
            if syn:
                current["synonyms"].append(syn)
        elif tag == "is_a":
            target = value.split("!", 1)[0].strip().split()
            if not target:
                raise OboParseError("is_a with no target", lineno)
            current["parents"].append(target[0])
        elif tag == "is_obsolete":
            current["obsolete"] = value.lower().startswith("true")

    flush()
    return OntologyGraph(terms)
