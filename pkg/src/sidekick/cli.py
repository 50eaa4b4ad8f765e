"""Pipeline orchestration: subcommands over a single JSON config.

Stages exchange flat files (JSON-lines, Turtle, TSV) inside the output
directory, so every stage can be rerun or inspected in isolation:

    ingest    SPL XML dir        -> corpus.jsonl
    dedup     corpus.jsonl       -> dedup_report.json, representatives.txt
    extract   representatives    -> extraction.jsonl
    map       extraction.jsonl   -> mappings.jsonl, product_ingredients.jsonl
    build-kg  mapped artifacts   -> sidekick.ttl, void.ttl, stats.json
    validate  sidekick.ttl       -> validation.json (exit 1 on violations)
    eval      annotation/target TSVs -> eval_report.json
    query     sidekick.ttl       -> query/<question>.csv, query_summary.json

``--offline`` swaps the LLM and RxNav clients for replay fixtures so a
run is fully deterministic.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click

from . import gateway as gw
from . import kg, query as query_mod, simeval, spl
from .embeddings import load_matrix
from .mapper import (
    Category,
    LiveRxNavClient,
    MappingResources,
    ReplayRxNavClient,
    classify_terms,
    map_term,
    route_mapping,
)
from .ontology import parse_obo

logger = logging.getLogger("sidekick")


class ConfigError(click.ClickException):
    pass


@dataclass
class PipelineConfig:
    base_dir: Path
    raw: dict

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.raw.get("paths", {}).get(key)
        if value is None:
            if required:
                raise ConfigError(f"config is missing paths.{key}")
            return None
        return (self.base_dir / value).resolve()

    @property
    def out_dir(self) -> Path:
        return self.path("out_dir")

    def gateway_config(self, section: str) -> gw.GatewayConfig:
        factories = {
            "extraction": gw.GatewayConfig.for_extraction,
            "mapping": gw.GatewayConfig.for_mapping,
            "side_effects": gw.GatewayConfig.for_side_effects,
            "classification": gw.GatewayConfig.for_classification,
        }
        overrides = dict(self.raw.get("gateway", {}).get(section, {}))
        shared = {
            k: v
            for k, v in self.raw.get("gateway", {}).items()
            if k in ("endpoint_url", "api_key_env")
        }
        return factories[section](**{**shared, **overrides})

    @property
    def dedup_threshold(self) -> float:
        return float(self.raw.get("dedup_threshold", 0.95))

    @property
    def adverse_codes(self) -> set[str]:
        return set(self.raw.get("adverse_codes", sorted(spl.DEFAULT_ADVERSE_CODES)))

    @property
    def dataset_metadata(self) -> kg.DatasetMetadata:
        meta = self.raw.get("dataset", {})
        return kg.DatasetMetadata(
            description=meta.get("description", "Drug label knowledge graph"),
            created=meta.get("created", "1970-01-01"),
            creator=meta.get("creator", "sidekick pipeline"),
            license=meta.get("license", "https://creativecommons.org/licenses/by/4.0/"),
            title=meta.get("title"),
        )

    def blacklist(self) -> set[str]:
        path = self.path("loinc_blacklist", required=False)
        if path is None:
            return spl.default_loinc_blacklist()
        return {
            line.strip()
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        }


# paths the pipeline creates rather than consumes
_OUTPUT_PATH_KEYS = ("out_dir", "journal_dir")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path).resolve()
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    cfg = PipelineConfig(base_dir=path.parent, raw=raw)
    for key in raw.get("paths", {}):
        if key in _OUTPUT_PATH_KEYS:
            continue
        resolved = cfg.path(key)
        if not resolved.exists():
            raise ConfigError(f"paths.{key} does not exist: {resolved}")
    threshold = cfg.dedup_threshold
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("dedup_threshold must be in (0, 1]")
    return cfg


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise click.ClickException(
            f"{path.name} not found; run `sidekick {producer}` first ({path})"
        )
    return path


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# --- stage implementations ----------------------------------------------------


def stage_ingest(cfg: PipelineConfig, jobs: int = 1) -> Path:
    spl_dir = cfg.path("spl_dir")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    blacklist = cfg.blacklist()
    files = sorted(spl_dir.glob("*.xml"))
    if not files:
        raise click.ClickException(f"no .xml files under {spl_dir}")

    def parse_one(path: Path) -> spl.SplDocument:
        doc = spl.parse_spl(path.read_bytes())
        return spl.filter_sections(doc, blacklist)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            docs = list(pool.map(parse_one, files))
    else:
        docs = [parse_one(f) for f in files]

    for doc in docs:
        logger.info("set_id=%s stage=ingest outcome=ok sections=%d",
                    doc.set_id, len(doc.sections))
    corpus_path = out / "corpus.jsonl"
    spl.save_corpus(docs, corpus_path)
    return corpus_path


def stage_dedup(cfg: PipelineConfig) -> Path:
    out = cfg.out_dir
    corpus = spl.load_corpus(_require(out / "corpus.jsonl", "ingest"))
    report = spl.deduplicate(corpus, cfg.dedup_threshold,
                             adverse_codes=cfg.adverse_codes)
    _write_json(out / "dedup_report.json", report.to_dict())
    (out / "representatives.txt").write_text(
        "".join(s + "\n" for s in report.representatives), encoding="utf-8")
    return out / "dedup_report.json"


def _make_transport(cfg: PipelineConfig, offline: bool):
    if offline:
        replay_dir = cfg.path("llm_replay_dir")
        return gw.ReplayTransport(replay_dir)
    transport = gw.LiveTransport(cfg.gateway_config("extraction"))
    journal_dir = cfg.path("journal_dir", required=False)
    if journal_dir is not None:
        return gw.JournalingTransport(transport, journal_dir)
    return transport


def _make_rxnav(cfg: PipelineConfig, offline: bool):
    if offline:
        return ReplayRxNavClient(cfg.path("rxnav_replay"))
    base = cfg.raw.get("rxnav", {}).get("base_url", "https://rxnav.nlm.nih.gov/REST")
    return LiveRxNavClient(base_url=base)


def stage_extract(cfg: PipelineConfig, offline: bool) -> Path:
    out = cfg.out_dir
    corpus = {d.set_id: d for d in
              spl.load_corpus(_require(out / "corpus.jsonl", "ingest"))}
    reps = _require(out / "representatives.txt", "dedup").read_text(
        encoding="utf-8").split()
    config = cfg.gateway_config("extraction")
    transport = _make_transport(cfg, offline)
    clock = gw.SystemClock()

    rows: list[dict] = []

    def extract_one(set_id: str) -> None:
        doc = corpus[set_id]
        text = spl.flatten(doc)
        try:
            result = gw.extract_entities(config, transport, text, set_id,
                                         clock=clock)
            rows.append(result.to_dict())
            logger.info("set_id=%s stage=extract outcome=ok", set_id)
        except gw.ExtractionError as exc:
            rows.append({"set_id": set_id, "error": str(exc)})
            logger.warning("set_id=%s stage=extract outcome=error detail=%s",
                           set_id, exc)

    gw.run_in_batches(reps, extract_one, config.batch_size,
                      config.inter_batch_sleep, clock=clock)
    _write_jsonl(out / "extraction.jsonl", rows)
    return out / "extraction.jsonl"


def _load_query_vectors(cfg: PipelineConfig) -> dict:
    path = cfg.path("query_vectors", required=False)
    if path is None or not path.exists():
        return {}
    matrix = load_matrix(path)
    return {row.surface.strip().lower(): row.vector for row in matrix.rows}


def _build_resources(cfg: PipelineConfig, offline: bool) -> MappingResources:
    hpo_graph = parse_obo(cfg.path("hpo_obo").read_text(encoding="utf-8"))
    mondo_graph = parse_obo(cfg.path("mondo_obo").read_text(encoding="utf-8"))
    hpo_matrix = load_matrix(cfg.path("hpo_matrix"))
    mondo_matrix = load_matrix(cfg.path("mondo_matrix"))
    transport = _make_transport(cfg, offline)
    mapping_gateway = gw.Gateway(cfg.gateway_config("mapping"), transport)
    return MappingResources(
        hpo_graph=hpo_graph,
        hpo_matrix=hpo_matrix,
        mondo_graph=mondo_graph,
        mondo_matrix=mondo_matrix,
        gateway=mapping_gateway,
        rxnav=_make_rxnav(cfg, offline),
        query_vectors=_load_query_vectors(cfg),
    )


def stage_map(cfg: PipelineConfig, offline: bool) -> Path:
    out = cfg.out_dir
    extraction = _read_jsonl(_require(out / "extraction.jsonl", "extract"))
    corpus = {d.set_id: d for d in
              spl.load_corpus(_require(out / "corpus.jsonl", "ingest"))}
    resources = _build_resources(cfg, offline)
    classify_gateway = gw.Gateway(cfg.gateway_config("classification"),
                                  resources.gateway.transport)
    # side-effect mapping runs with its own (larger) completion budget
    side_effect_gateway = gw.Gateway(cfg.gateway_config("side_effects"),
                                     resources.gateway.transport)

    mapping_rows: list[dict] = []
    for record in extraction:
        set_id = record["set_id"]
        if "error" in record:
            logger.warning("set_id=%s stage=map outcome=skipped", set_id)
            continue

        for surface in record.get("side_effects", []):
            result = map_term(
                surface, resources.hpo_graph, resources.hpo_matrix,
                resources.query_vector(surface), side_effect_gateway,
                fallback_root="HP:0000001",
            )
            mapping_rows.append({
                "set_id": set_id, "relation": "side_effect", "surface": surface,
                "category": None, "route": "hpo",
                "mapping": result.to_dict(), "resolution": None,
            })

        for relation in ("indication", "contraindication"):
            terms = record.get(relation + "s", [])
            if not terms:
                continue
            categories = classify_terms(terms, classify_gateway)
            for surface, category in zip(terms, categories):
                routed = route_mapping(surface, category, resources)
                row = {
                    "set_id": set_id, "relation": relation, "surface": surface,
                    "category": category.value, "route": routed.route,
                    "mapping": routed.mapping.to_dict() if routed.mapping else None,
                    "resolution": (routed.resolution.to_dict()
                                   if routed.resolution else None),
                }
                if routed.resolution and routed.resolution.rxcuis:
                    row["ingredient_labels"] = {
                        r: resources.rxnav.name_of(r) or f"RxCUI {r}"
                        for r in routed.resolution.rxcuis
                    }
                mapping_rows.append(row)
        logger.info("set_id=%s stage=map outcome=ok", set_id)

    _write_jsonl(out / "mappings.jsonl", mapping_rows)

    product_rows: list[dict] = []
    extracted_ids = [r["set_id"] for r in extraction if "error" not in r]
    for set_id in extracted_ids:
        doc = corpus[set_id]
        for rxcui in doc.product_rxcuis:
            ingredients = resources.rxnav.related_ingredients(rxcui)
            product_rows.append({
                "set_id": set_id,
                "product_rxcui": rxcui,
                "product_label": resources.rxnav.name_of(rxcui) or f"RxCUI {rxcui}",
                "ingredients": ingredients,
                "ingredient_labels": {
                    r: resources.rxnav.name_of(r) or f"RxCUI {r}"
                    for r in ingredients
                },
            })
    _write_jsonl(out / "product_ingredients.jsonl", product_rows)
    return out / "mappings.jsonl"


_KIND_BY_RELATION_ROUTE = {
    ("side_effect", "hpo"): "SideEffect",
    ("indication", "mondo"): "DiseaseIndication",
    ("indication", "hpo"): "PhenotypeIndication",
    ("indication", "drug"): "DrugIndication",
    ("contraindication", "mondo"): "DiseaseContraindication",
    ("contraindication", "hpo"): "PhenotypeContraindication",
    ("contraindication", "drug"): "DrugContraindication",
}


def stage_build_kg(cfg: PipelineConfig) -> Path:
    out = cfg.out_dir
    corpus = spl.load_corpus(_require(out / "corpus.jsonl", "ingest"))
    mappings = _read_jsonl(_require(out / "mappings.jsonl", "map"))
    product_rows = _read_jsonl(_require(out / "product_ingredients.jsonl", "map"))

    ingredient_labels: dict[str, str] = {}
    collections: dict[str, kg.DrugCollectionNode] = {}
    doc_collections: dict[str, list[str]] = {}
    products: dict[str, kg.ProductNode] = {}

    for row in product_rows:
        if not row["ingredients"]:
            logger.warning("set_id=%s stage=build-kg outcome=no-ingredients "
                           "product=%s", row["set_id"], row["product_rxcui"])
            continue
        ingredient_labels.update(row.get("ingredient_labels", {}))
        node = kg.DrugCollectionNode.from_members(
            row["ingredients"],
            label=" / ".join(
                row["ingredient_labels"].get(r, f"RxCUI {r}")
                for r in sorted(row["ingredients"], key=int)
            ),
        )
        collections.setdefault(node.iri, node)
        doc_collections.setdefault(row["set_id"], [])
        if node.iri not in doc_collections[row["set_id"]]:
            doc_collections[row["set_id"]].append(node.iri)
        product = products.setdefault(
            row["product_rxcui"],
            kg.ProductNode(rxcui=row["product_rxcui"],
                           label=row["product_label"], collections=[]),
        )
        if node.iri not in product.collections:
            product.collections.append(node.iri)

    documents = [kg.DocumentNode(set_id=d.set_id) for d in corpus]
    doc_iris = {d.set_id: d.iri for d in documents}

    associations: dict[tuple[str, str, str], kg.AssociationNode] = {}

    def add_association(kind: str, drug_iri: str, target_iri: str,
                        target_label: str | None, set_id: str) -> None:
        key = (kind, drug_iri, target_iri)
        node = associations.get(key)
        if node is None:
            node = kg.AssociationNode(
                kind=kind, drug=drug_iri, target=target_iri,
                sources=[doc_iris[set_id]], target_label=target_label,
            )
            associations[key] = node
        elif doc_iris[set_id] not in node.sources:
            node.sources.append(doc_iris[set_id])

    for row in mappings:
        kind = _KIND_BY_RELATION_ROUTE.get((row["relation"], row["route"]))
        if kind is None:
            continue
        set_id = row["set_id"]
        drugs = doc_collections.get(set_id, [])
        if not drugs:
            logger.warning("set_id=%s stage=build-kg outcome=no-collection "
                           "surface=%s", set_id, row["surface"])
            continue

        if row["route"] in ("hpo", "mondo"):
            mapping = row["mapping"]
            target_iri = kg.curie_to_iri(mapping["target"])
            target_label = mapping["canonical_name"] or None
        else:
            resolution = row["resolution"]
            if resolution["group"] != "resolved":
                continue
            node = kg.DrugCollectionNode.from_members(
                resolution["rxcuis"],
                label=" / ".join(
                    row.get("ingredient_labels", {}).get(r, f"RxCUI {r}")
                    for r in sorted(resolution["rxcuis"], key=int)
                ),
            )
            ingredient_labels.update(row.get("ingredient_labels", {}))
            collections.setdefault(node.iri, node)
            target_iri = node.iri
            target_label = node.label

        for drug_iri in drugs:
            add_association(kind, drug_iri, target_iri, target_label, set_id)

    triples = kg.build_graph(
        products=[products[k] for k in sorted(products)],
        collections=[collections[k] for k in sorted(collections)],
        associations=[associations[k] for k in sorted(associations)],
        metadata=cfg.dataset_metadata,
        documents=documents,
        ingredient_labels=ingredient_labels,
    )

    (out / "sidekick.ttl").write_text(kg.serialize_turtle(triples),
                                      encoding="utf-8")
    stats = kg.compute_stats(triples)
    kg.write_stats(stats, out / "stats.json")
    (out / "void.ttl").write_text(kg.emit_void(stats, cfg.dataset_metadata),
                                  encoding="utf-8")
    logger.info("stage=build-kg outcome=ok triples=%d associations=%d",
                stats.total_triples, stats.total_associations)
    return out / "sidekick.ttl"


def stage_validate(cfg: PipelineConfig) -> kg.ValidationReport:
    out = cfg.out_dir
    triples = kg.parse_turtle(
        _require(out / "sidekick.ttl", "build-kg").read_text(encoding="utf-8"))
    report = kg.validate_shapes(triples)
    _write_json(out / "validation.json", report.to_dict())
    return report


def stage_eval(cfg: PipelineConfig) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    section = cfg.raw.get("eval")
    if not section:
        raise ConfigError("config has no eval section")
    base = cfg.base_dir
    corpus = simeval.load_annotations(base / section["annotations"])
    targets = simeval.load_targets(base / section["targets"])

    if section.get("hierarchy"):
        graph = simeval.load_hierarchy_file(base / section["hierarchy"])
        if section.get("normalize_to_pt"):
            corpus = simeval.AnnotationCorpus(annotations={
                drug: {
                    pt for code in codes
                    for pt in simeval.normalize_to_level(graph, code, "PT")
                }
                for drug, codes in corpus.annotations.items()
            })
            corpus.annotations = {d: s for d, s in corpus.annotations.items() if s}
    else:
        graph = parse_obo(cfg.path("hpo_obo").read_text(encoding="utf-8"))

    drugs = sorted(set(corpus.annotations) & set(targets))
    pairs = simeval.build_pairs(targets, drugs)
    report = simeval.evaluate(corpus, graph, pairs)
    _write_json(out / "eval_report.json", report.to_dict())

    if section.get("scores_csv"):
        scored = simeval.score_pairs(corpus, graph, pairs)
        with (out / "pair_scores.csv").open("w", newline="",
                                            encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["drug_a", "drug_b", "positive", "score"])
            for pair, score in scored:
                writer.writerow([pair.a, pair.b, int(pair.positive),
                                 f"{score:.10g}"])
    logger.info("stage=eval outcome=ok auc=%.4f", report.auc)
    return out / "eval_report.json"


def stage_query(cfg: PipelineConfig) -> Path:
    out = cfg.out_dir
    triples = kg.parse_turtle(
        _require(out / "sidekick.ttl", "build-kg").read_text(encoding="utf-8"))
    graphs = {
        "hpo": parse_obo(cfg.path("hpo_obo").read_text(encoding="utf-8")),
        "mondo": parse_obo(cfg.path("mondo_obo").read_text(encoding="utf-8")),
    }
    questions_path = cfg.path("questions", required=False)
    questions = (query_mod.load_questions(questions_path)
                 if questions_path else query_mod.default_questions())

    qdir = out / "query"
    qdir.mkdir(parents=True, exist_ok=True)
    summary: dict[str, int] = {}
    for name, count, result in query_mod.run_competency_suite(
            triples, graphs, questions):
        summary[name] = count
        rows = sorted(
            (m.drug, m.drug_label, m.kind, m.target, m.target_label)
            for m in result.matches
        )
        with (qdir / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["drug", "drug_label", "kind", "target",
                             "target_label"])
            writer.writerows(rows)
        click.echo(f"{name}: {count} drugs")
    _write_json(out / "query_summary.json", summary)
    return out / "query_summary.json"


# --- click wiring ---------------------------------------------------------------


@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Drug-label knowledge graph pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )


def _cfg_option(fn):
    return click.option("--config", "config_path", required=True,
                        type=click.Path(exists=True))(fn)


@main.command()
@_cfg_option
@click.option("--jobs", default=1, show_default=True)
def ingest(config_path, jobs):
    """Parse and filter the SPL directory into the corpus store."""
    stage_ingest(load_config(config_path), jobs=jobs)


@main.command()
@_cfg_option
def dedup(config_path):
    """Group near-duplicate labels and pick representatives."""
    stage_dedup(load_config(config_path))


@main.command()
@_cfg_option
@click.option("--offline", is_flag=True, help="Use replay fixtures.")
def extract(config_path, offline):
    """Extract indications/contraindications/side effects per label."""
    stage_extract(load_config(config_path), offline)


@main.command(name="map")
@_cfg_option
@click.option("--offline", is_flag=True, help="Use replay fixtures.")
def map_cmd(config_path, offline):
    """Map extracted terms to HPO/MONDO/RxNorm."""
    stage_map(load_config(config_path), offline)


@main.command(name="build-kg")
@_cfg_option
def build_kg(config_path):
    """Assemble and serialize the knowledge graph."""
    stage_build_kg(load_config(config_path))


@main.command()
@_cfg_option
def validate(config_path):
    """Shape-validate the serialized graph; exit 1 on violations."""
    report = stage_validate(load_config(config_path))
    click.echo(f"associations checked: {report.checked_associations}, "
               f"violations: {len(report.violations)}")
    if not report.ok:
        for violation in report.violations:
            click.echo(f"  rule {violation.rule}: {violation.node}: "
                       f"{violation.message}")
        sys.exit(1)


@main.command(name="eval")
@_cfg_option
def eval_cmd(config_path):
    """Similarity-based drug-pair evaluation."""
    stage_eval(load_config(config_path))


@main.command(name="query")
@_cfg_option
def query_cmd(config_path):
    """Run the competency-question suite."""
    stage_query(load_config(config_path))


@main.command(name="all")
@_cfg_option
@click.option("--offline", is_flag=True, help="Use replay fixtures.")
@click.option("--jobs", default=1, show_default=True)
def all_cmd(config_path, offline, jobs):
    """Run every stage in order."""
    cfg = load_config(config_path)
    stage_ingest(cfg, jobs=jobs)
    stage_dedup(cfg)
    stage_extract(cfg, offline)
    stage_map(cfg, offline)
    stage_build_kg(cfg)
    report = stage_validate(cfg)
    if not report.ok:
        raise click.ClickException(
            f"shape validation found {len(report.violations)} violations")
    if cfg.raw.get("eval"):
        stage_eval(cfg)
    stage_query(cfg)


if __name__ == "__main__":
    main()
