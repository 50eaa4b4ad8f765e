"""Structured Product Label parsing, flattening, and deduplication.

SPL documents are HL7 v3 XML; each coded section carries a LOINC code.
Flattening renders tables as pipe-separated cells with one row per line.
Deduplication groups labels by product RxCUI and merges documents whose
adverse-reactions text is identical (MD5) or near-identical (gestalt
sequence matching at a configurable threshold, default 0.95).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from importlib import resources
from pathlib import Path
from xml.etree import ElementTree

logger = logging.getLogger(__name__)

LOINC_OID = "2.16.840.1.113883.6.1"
RXNORM_OID = "2.16.840.1.113883.6.88"
LOINC_CODE_RE = re.compile(r"^\d{4,5}-\d$")

# LOINC codes whose sections are treated as adverse-reactions text
DEFAULT_ADVERSE_CODES = frozenset({"34084-4"})

Table = list[list[str]]


class SplFormatError(ValueError):
    """Structurally invalid SPL document (well-formed XML, wrong content)."""


@dataclass
class Section:
    loinc_code: str
    title: str
    paragraphs: list[str] = field(default_factory=list)
    tables: list[Table] = field(default_factory=list)


@dataclass
class SplDocument:
    set_id: str
    product_rxcuis: list[str] = field(default_factory=list)
    sections: list[Section] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "set_id": self.set_id,
            "product_rxcuis": list(self.product_rxcuis),
            "sections": [
                {
                    "loinc_code": s.loinc_code,
                    "title": s.title,
                    "paragraphs": list(s.paragraphs),
                    "tables": [list(map(list, t)) for t in s.tables],
                }
                for s in self.sections
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SplDocument":
        return cls(
            set_id=obj["set_id"],
            product_rxcuis=list(obj.get("product_rxcuis", [])),
            sections=[
                Section(
                    loinc_code=s["loinc_code"],
                    title=s["title"],
                    paragraphs=list(s.get("paragraphs", [])),
                    tables=[list(map(list, t)) for t in s.get("tables", [])],
                )
                for s in obj.get("sections", [])
            ],
        )


@dataclass
class DedupReport:
    groups: dict[str, list[str]]
    representatives: list[str]
    exact_merges: int
    fuzzy_merges: int

    def to_dict(self) -> dict:
        return {
            "groups": {k: list(v) for k, v in self.groups.items()},
            "representatives": list(self.representatives),
            "exact_merges": self.exact_merges,
            "fuzzy_merges": self.fuzzy_merges,
        }


def default_loinc_blacklist() -> set[str]:
    """Bundled exclusion list of non-clinical section codes."""
    text = resources.files("sidekick").joinpath("data/loinc_blacklist.txt").read_text()
    return {
        line.strip()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    }


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _text_of(elem: ElementTree.Element) -> str:
    # collapse runs of whitespace; itertext crosses inline markup
    return re.sub(r"\s+", " ", "".join(elem.itertext())).strip()


def _own_subtree(elem: ElementTree.Element, stop: str):
    """Iterate descendants, pruning any nested ``stop``-named subtree."""
    for child in elem:
        if _local(child.tag) == stop:
            continue
        yield child
        yield from _own_subtree(child, stop)


def parse_spl(xml: bytes) -> SplDocument:
    """Parse SPL XML bytes into an :class:`SplDocument`.

    The document-level ``setId`` is mandatory. Product RxCUIs are taken
    from ``code`` elements under ``manufacturedProduct`` whose codeSystem
    is the RxNorm OID. Every ``section`` element becomes a Section with
    its own paragraphs and tables (nested sections are captured
    separately, in document order).
    """
    try:
        root = ElementTree.fromstring(xml)
    except ElementTree.ParseError as exc:
        raise ElementTree.ParseError(f"SPL parse error: {exc}") from exc

    set_id = None
    for elem in root.iter():
        if _local(elem.tag) == "setId":
            set_id = elem.get("root") or (elem.text or "").strip()
            break
    if not set_id:
        raise SplFormatError("document has no setId")

    rxcuis: list[str] = []
    for elem in root.iter():
        if _local(elem.tag) != "manufacturedProduct":
            continue
        for sub in elem.iter():
            if (
                _local(sub.tag) == "code"
                and sub.get("codeSystem") == RXNORM_OID
                and sub.get("code")
                and sub.get("code") not in rxcuis
            ):
                rxcuis.append(sub.get("code"))

    sections: list[Section] = []
    for elem in root.iter():
        if _local(elem.tag) != "section":
            continue
        loinc = ""
        title = ""
        for child in elem:
            name = _local(child.tag)
            if name == "code":
                code = child.get("code") or ""
                # non-LOINC-shaped codes leave the section uncoded
                loinc = code if LOINC_CODE_RE.match(code) else ""
            elif name == "title":
                title = _text_of(child)
        paragraphs: list[str] = []
        tables: list[Table] = []
        for node in _own_subtree(elem, stop="section"):
            name = _local(node.tag)
            if name == "paragraph":
                text = _text_of(node)
                if text:
                    paragraphs.append(text)
            elif name == "table":
                rows: Table = []
                for tr in node.iter():
                    if _local(tr.tag) == "tr":
                        rows.append(
                            [
                                _text_of(cell)
                                for cell in tr
                                if _local(cell.tag) in ("td", "th")
                            ]
                        )
                if rows:
                    tables.append(rows)
        sections.append(
            Section(loinc_code=loinc, title=title, paragraphs=paragraphs, tables=tables)
        )

    return SplDocument(set_id=set_id, product_rxcuis=rxcuis, sections=sections)


def filter_sections(doc: SplDocument, blacklist: set[str]) -> SplDocument:
    """Drop sections whose LOINC code is blacklisted; order preserved."""
    return SplDocument(
        set_id=doc.set_id,
        product_rxcuis=list(doc.product_rxcuis),
        sections=[s for s in doc.sections if s.loinc_code not in blacklist],
    )


def _render_section(section: Section) -> str:
    lines: list[str] = []
    if section.title:
        lines.append(section.title)
    lines.extend(section.paragraphs)
    for table in section.tables:
        lines.append("\n".join(" | ".join(row) for row in table))
    return "\n".join(lines)


def flatten(doc: SplDocument) -> str:
    """Render a document as plain text: title line, paragraphs, then
    tables with rows on separate lines and cells joined by `` | ``;
    sections separated by a blank line."""
    return "\n\n".join(_render_section(s) for s in doc.sections)


def adverse_section_text(
    doc: SplDocument, adverse_codes: frozenset[str] | set[str] = DEFAULT_ADVERSE_CODES
) -> str:
    """Flattened text of the adverse-reactions sections only ("" if absent)."""
    kept = [s for s in doc.sections if s.loinc_code in adverse_codes]
    return "\n\n".join(_render_section(s) for s in kept)


def _canonical_pair(a: str, b: str) -> tuple[str, str]:
    # fixed operand order makes the measure symmetric by construction
    if (len(a), a) <= (len(b), b):
        return a, b
    return b, a


def ratcliff_ratio(a: str, b: str) -> float:
    """Gestalt pattern-matching similarity in [0, 1].

    2*M / (len(a) + len(b)) where M totals the matched characters from the
    recursive longest-common-substring decomposition; the pair is put in a
    canonical order first (shorter string, then lexicographic) so the
    measure is symmetric. Two empty strings score 1.0.
    """
    if not a and not b:
        return 1.0
    x, y = _canonical_pair(a, b)
    matcher = SequenceMatcher(None, x, y, autojunk=False)
    matched = sum(block.size for block in matcher.get_matching_blocks())
    return 2.0 * matched / (len(a) + len(b))


def _adverse_digest(text: str) -> str:
    return hashlib.md5(text.rstrip().encode("utf-8")).hexdigest()


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        # keep the smaller input index as the root so representatives
        # are always the earliest-encountered document
        if rj < ri:
            ri, rj = rj, ri
        self.parent[rj] = ri
        return True


def deduplicate(
    docs: list[SplDocument],
    threshold: float = 0.95,
    adverse_codes: frozenset[str] | set[str] = DEFAULT_ADVERSE_CODES,
) -> DedupReport:
    """Merge near-duplicate labels within each product RxCUI group.

    Within a group, two documents merge when their adverse-reactions text
    is hash-identical or has gestalt similarity >= ``threshold``. Clusters
    are connected components of the merge relation unioned across groups,
    so a multi-product document is still retained exactly once; the
    earliest document of each cluster is its representative.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")

    texts = [adverse_section_text(d, adverse_codes) for d in docs]
    digests = [_adverse_digest(t) for t in texts]
    trimmed = [t.rstrip() for t in texts]

    by_product: dict[str, list[int]] = {}
    for i, doc in enumerate(docs):
        for rxcui in doc.product_rxcuis:
            by_product.setdefault(rxcui, []).append(i)

    uf = _UnionFind(len(docs))
    exact_merges = 0
    fuzzy_merges = 0
    for members in by_product.values():
        for pos, i in enumerate(members):
            for j in members[pos + 1 :]:
                if uf.find(i) == uf.find(j):
                    continue
                if digests[i] == digests[j]:
                    if uf.union(i, j):
                        exact_merges += 1
                    continue
                la, lb = len(trimmed[i]), len(trimmed[j])
                if la + lb == 0:
                    continue
                # 2*min/(sum) bounds the ratio from above: cheap skip
                if 2.0 * min(la, lb) / (la + lb) < threshold:
                    continue
                if ratcliff_ratio(trimmed[i], trimmed[j]) >= threshold:
                    if uf.union(i, j):
                        fuzzy_merges += 1

    clusters: dict[int, list[int]] = {}
    for i in range(len(docs)):
        clusters.setdefault(uf.find(i), []).append(i)

    groups: dict[str, list[str]] = {}
    representatives: list[str] = []
    for rep in sorted(clusters):
        rep_doc = docs[rep]
        representatives.append(rep_doc.set_id)
        primary = rep_doc.product_rxcuis[0] if rep_doc.product_rxcuis else "none"
        groups[f"{primary}:{rep_doc.set_id}"] = [
            docs[i].set_id for i in sorted(clusters[rep])
        ]

    logger.info(
        "dedup: %d documents -> %d representatives (%d exact, %d fuzzy merges)",
        len(docs), len(representatives), exact_merges, fuzzy_merges,
    )
    return DedupReport(
        groups=groups,
        representatives=representatives,
        exact_merges=exact_merges,
        fuzzy_merges=fuzzy_merges,
    )


def load_corpus(path: str | Path) -> list[SplDocument]:
    """Read a JSON-lines corpus store written by the ingest stage."""
    docs = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                docs.append(SplDocument.from_dict(json.loads(line)))
    return docs


def save_corpus(docs: list[SplDocument], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), sort_keys=True) + "\n")
