#!/usr/bin/env python3
"""Regenerate the mini-corpus fixtures.

Produces the embedding matrix files (deterministic pseudo-vectors) and
the LLM replay directory. Replay files are recorded by running the real
extract/map stages against a scripted stand-in model, journaled into
``replay_llm/`` keyed by request hash, so `sidekick all --offline`
replays the exact same traffic.

Run from this directory after changing the corpus, prompts, or configs:

    python gen_fixtures.py
"""

from __future__ import annotations

import hashlib
import json
import re
import shutil
import struct
import sys
import tempfile
from pathlib import Path

import sidekick.cli as cli
from sidekick.gateway import JournalingTransport
from sidekick.ontology import parse_obo
from sidekick.spl import ratcliff_ratio

HERE = Path(__file__).parent
DIMENSION = 8

EXTRACTION_RESPONSES = {
    "Examplol": """<drug_information>
  <indications>
    <indication><indication_name>asthma</indication_name></indication>
  </indications>
  <contraindications>
    <contraindication><contraindication_name>renal failure</contraindication_name></contraindication>
    <contraindication><contraindication_name>hypersensitivity to examplol</contraindication_name></contraindication>
  </contraindications>
  <side_effects>
    <side_effect><side_effect_name>headache</side_effect_name></side_effect>
    <side_effect><side_effect_name>high blood pressure</side_effect_name></side_effect>
    <side_effect><side_effect_name>stomach upset</side_effect_name></side_effect>
    <side_effect><side_effect_name>dizzy spells</side_effect_name></side_effect>
  </side_effects>
</drug_information>""",
    "Combomax": """<drug_information>
  <indications>
    <indication><indication_name>tuberculosis</indication_name></indication>
    <indication><indication_name>palpitations</indication_name></indication>
  </indications>
  <contraindications>
    <contraindication><contraindication_name>coadministration with warfarin</contraindication_name></contraindication>
  </contraindications>
  <side_effects>
    <side_effect><side_effect_name>nausea</side_effect_name></side_effect>
  </side_effects>
</drug_information>""",
    "Metforal": """<drug_information>
  <indications>
    <indication><indication_name>type 2 diabetes mellitus</indication_name></indication>
    <indication><indication_name>use with metforminol</indication_name></indication>
  </indications>
  <contraindications>
    <contraindication><contraindication_name>chronic kidney disease</contraindication_name></contraindication>
  </contraindications>
  <side_effects>
    <side_effect><side_effect_name>gibberishterm</side_effect_name></side_effect>
  </side_effects>
</drug_information>""",
}

CLASSIFICATIONS = {
    "asthma": "Disease",
    "renal failure": "Disease",
    "tuberculosis": "Disease",
    "palpitations": "Phenotype",
    "coadministration with warfarin": "Drug or Chemical",
    "type 2 diabetes mellitus": "Disease",
    "use with metforminol": "Drug or Chemical",
    "chronic kidney disease": "Phenotype",
}

DISAMBIGUATIONS = {
    "stomach upset": '{"id": "HP:0002018", "name": "Nausea"}',
    "dizzy spells": '{"id": "HP:0002321", "name": "Vertigo"}',
    # deliberately unparseable: drives the three-attempt fallback path
    "gibberishterm": "I cannot map this term to any of the candidates.",
}

QUERY_TERMS = [
    "headache",
    "high blood pressure",
    "stomach upset",
    "dizzy spells",
    "nausea",
    "gibberishterm",
]


def pseudo_vector(text: str) -> list[float]:
    """Stable unit-scale vector from a text hash; not a real embedding."""
    digest = hashlib.sha256(text.strip().lower().encode("utf-8")).digest()
    raw = [
        struct.unpack(">i", digest[4 * i: 4 * i + 4])[0] / 2**31
        for i in range(DIMENSION)
    ]
    return [round(x, 6) for x in raw]


def write_matrix(path: Path, rows: list[tuple[str, str]], model: str) -> None:
    lines = [json.dumps({"dimension": DIMENSION, "model": model})]
    for surface, term_id in rows:
        vector = pseudo_vector(surface)
        if surface == "stomach upset":
            # plant an exact semantic hit on the Nausea synonym row
            vector = pseudo_vector("Feeling queasy")
        lines.append(json.dumps(
            {"surface": surface, "term_id": term_id, "vector": vector}))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_matrices() -> None:
    for obo_name, out_name in (("mini_hpo.obo", "hpo_matrix.jsonl"),
                               ("mini_mondo.obo", "mondo_matrix.jsonl")):
        graph = parse_obo((HERE / obo_name).read_text(encoding="utf-8"))
        rows = []
        for tid in sorted(graph.terms):
            term = graph.terms[tid]
            if term.obsolete:
                continue
            rows.append((term.name, tid))
            rows.extend((syn, tid) for syn in term.synonyms)
        write_matrix(HERE / out_name, rows, model="fixture-hash-v1")

    query_rows = [
        (term, "QUERY:" + re.sub(r"[^A-Za-z0-9]+", "_", term))
        for term in QUERY_TERMS
    ]
    write_matrix(HERE / "query_vectors.jsonl", query_rows,
                 model="fixture-hash-v1")


class FakeModelTransport:
    """Answers extraction/classification/disambiguation prompts from tables."""

    def send(self, body: dict) -> dict:
        prompt = body["messages"][0]["content"]
        if prompt.startswith("You are an expert in extracting information"):
            text = self._extraction(prompt)
        elif prompt.startswith("You are classifying clinical terms"):
            text = self._classification(prompt)
        elif prompt.startswith("You are mapping a clinical term"):
            text = self._disambiguation(prompt)
        else:
            raise AssertionError(f"unexpected prompt head: {prompt[:60]!r}")
        return {"choices": [{"message": {"content": text}}]}

    @staticmethod
    def _extraction(prompt: str) -> str:
        for marker, response in EXTRACTION_RESPONSES.items():
            if marker in prompt:
                return response
        raise AssertionError("extraction prompt matches no document marker")

    @staticmethod
    def _classification(prompt: str) -> str:
        terms = re.findall(r"^(\d+)\. (.+)$", prompt.split("Terms:\n")[1],
                           flags=re.MULTILINE)
        return json.dumps([
            {"index": int(i), "category": CLASSIFICATIONS[t]}
            for i, t in terms
        ])

    @staticmethod
    def _disambiguation(prompt: str) -> str:
        term = re.search(r'Term: "(.*)"', prompt).group(1)
        return DISAMBIGUATIONS[term]


def check_dedup_assumptions() -> None:
    """The fuzzy pair must really clear the 0.95 bar (and others must not)."""
    from sidekick.spl import adverse_section_text, parse_spl

    texts = {}
    for xml in sorted((HERE / "spl").glob("*.xml")):
        doc = parse_spl(xml.read_bytes())
        texts[xml.stem] = adverse_section_text(doc).rstrip()
    assert texts["doc1"] == texts["doc2"], "doc2 must be an exact duplicate"
    ratio13 = ratcliff_ratio(texts["doc1"], texts["doc3"])
    assert ratio13 >= 0.95, f"doc1/doc3 ratio {ratio13:.4f} below threshold"
    ratio14 = ratcliff_ratio(texts["doc1"], texts["doc4"])
    assert ratio14 < 0.95, f"doc1/doc4 ratio {ratio14:.4f} unexpectedly high"
    print(f"dedup ratios ok: doc1~doc3 {ratio13:.4f}, doc1~doc4 {ratio14:.4f}")


def record_replay() -> None:
    replay_dir = HERE / "replay_llm"
    if replay_dir.exists():
        shutil.rmtree(replay_dir)
    journaled = JournalingTransport(FakeModelTransport(), replay_dir)
    cli._make_transport = lambda cfg, offline: journaled

    with tempfile.TemporaryDirectory() as tmp:
        raw = json.loads((HERE / "config.json").read_text(encoding="utf-8"))
        raw["paths"]["out_dir"] = tmp
        scratch = Path(tmp) / "config.json"
        for key, value in raw["paths"].items():
            if key != "out_dir":
                raw["paths"][key] = str(HERE / value)
        scratch.write_text(json.dumps(raw), encoding="utf-8")

        cfg = cli.load_config(scratch)
        cli.stage_ingest(cfg)
        cli.stage_dedup(cfg)
        cli.stage_extract(cfg, offline=True)
        cli.stage_map(cfg, offline=True)
        cli.stage_build_kg(cfg)
        report = cli.stage_validate(cfg)
        assert report.ok, report.violations
    print(f"recorded {len(list(replay_dir.glob('*.json')))} replay fixtures")


def main() -> None:
    build_matrices()
    check_dedup_assumptions()
    record_replay()
    print("fixtures regenerated")


if __name__ == "__main__":
    sys.exit(main())
