import json
import random
from pathlib import Path

import pytest

from sidekick.ontology import OntologyGraph, OntologyTerm

MINI_DIR = Path(__file__).parent / "data" / "mini"


def mini_config(tmp_path: Path) -> Path:
    """Copy of the mini-corpus config with absolute inputs and a tmp out dir."""
    raw = json.loads((MINI_DIR / "config.json").read_text(encoding="utf-8"))
    for key, value in raw["paths"].items():
        raw["paths"][key] = str(MINI_DIR / value)
    raw["paths"]["out_dir"] = str(tmp_path / "out")
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(raw), encoding="utf-8")
    return cfg_path


def make_graph(edges: list[tuple[str, str]], names: dict[str, str] | None = None,
               synonyms: dict[str, list[str]] | None = None) -> OntologyGraph:
    """Graph from (child, parent) edges; isolated ids allowed via names."""
    names = names or {}
    synonyms = synonyms or {}
    ids = {t for e in edges for t in e} | set(names)
    parents: dict[str, list[str]] = {t: [] for t in ids}
    for child, parent in edges:
        if parent not in parents[child]:
            parents[child].append(parent)
    terms = {
        tid: OntologyTerm(
            id=tid,
            name=names.get(tid, tid.replace(":", " ")),
            synonyms=list(synonyms.get(tid, [])),
            parents=plist,
        )
        for tid, plist in parents.items()
    }
    return OntologyGraph(terms)


def random_dag(rng: random.Random, n_terms: int,
               prefix: str = "T") -> tuple[OntologyGraph, list[tuple[str, str]]]:
    """Random DAG: each term may pick parents among earlier terms only."""
    ids = [f"{prefix}:{i:07d}" for i in range(n_terms)]
    edges: list[tuple[str, str]] = []
    for i, tid in enumerate(ids):
        if i == 0:
            continue
        for parent in rng.sample(ids[:i], k=rng.randint(0, min(3, i))):
            edges.append((tid, parent))
    graph = make_graph(edges, names={tid: f"term {tid}" for tid in ids})
    return graph, edges


@pytest.fixture
def diamond():
    """A -> {B, C} -> D."""
    return make_graph([("X:A", "X:B"), ("X:A", "X:C"),
                       ("X:B", "X:D"), ("X:C", "X:D")])
