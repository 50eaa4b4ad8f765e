import json

import numpy as np
import pytest

from sidekick.embeddings import EmbeddingMatrix, EmbeddingRow
from sidekick.gateway import FakeClock, Gateway, GatewayConfig, ScriptedTransport
from sidekick.mapper import (
    Category,
    MappingResources,
    ReplayRxNavClient,
    classify_term,
    classify_terms,
    extract_drug_entities,
    keyword_category,
    map_term,
    resolve_drug,
    route_mapping,
)

from conftest import make_graph

CFG = GatewayConfig(max_retries=0, retry_delay=0.0)

HPO_EDGES = [
    ("HP:0000118", "HP:0000001"),
    ("HP:0002315", "HP:0000118"),
    ("HP:0002018", "HP:0000118"),
    ("HP:0002321", "HP:0000118"),
    ("HP:0001279", "HP:0000118"),
]
HPO_NAMES = {
    "HP:0000001": "All",
    "HP:0000118": "Phenotypic abnormality",
    "HP:0002315": "Headache",
    "HP:0002018": "Nausea",
    "HP:0002321": "Vertigo",
    "HP:0001279": "Syncope",
}
HPO_SYNONYMS = {
    "HP:0002018": ["Feeling queasy"],
    "HP:0002321": ["dizzy spells"],
    "HP:0001279": ["dizzy spells"],
}


def hpo_graph():
    return make_graph(HPO_EDGES, names=HPO_NAMES, synonyms=HPO_SYNONYMS)


def hpo_matrix():
    rows = [
        EmbeddingRow("Headache", "HP:0002315", np.array([1.0, 0.0, 0.0])),
        EmbeddingRow("Nausea", "HP:0002018", np.array([0.0, 1.0, 0.0])),
        EmbeddingRow("Feeling queasy", "HP:0002018", np.array([0.0, 0.9, 0.1])),
        EmbeddingRow("Vertigo", "HP:0002321", np.array([0.0, 0.0, 1.0])),
    ]
    return EmbeddingMatrix(dimension=3, model_tag="test", rows=rows)


def gateway_with(script):
    transport = ScriptedTransport(script)
    return Gateway(config=CFG, transport=transport, clock=FakeClock()), transport


def test_exact_match_no_gateway_call():
    gateway, transport = gateway_with([])
    result = map_term("Headache", hpo_graph(), hpo_matrix(), None, gateway)
    assert result.stage == "exact"
    assert result.target == "HP:0002315"
    assert result.score is None
    assert result.attempts == 0
    assert transport.calls == 0


def test_exact_match_via_synonym_case_insensitive():
    gateway, transport = gateway_with([])
    result = map_term("FEELING QUEASY", hpo_graph(), hpo_matrix(), None, gateway)
    assert result.stage == "exact"
    assert result.target == "HP:0002018"
    assert transport.calls == 0


def test_ambiguous_exact_goes_to_llm():
    gateway, transport = gateway_with(
        ['{"id": "HP:0002321", "name": "Vertigo"}'])
    result = map_term("dizzy spells", hpo_graph(), hpo_matrix(), None, gateway)
    assert result.stage == "llm"
    assert result.target == "HP:0002321"
    assert result.score == 1.0          # ambiguity candidates carry score 1.0
    assert result.attempts == 1
    assert transport.calls == 1


def test_semantic_candidates_feed_llm():
    query = np.array([0.0, 0.9, 0.1])   # equals the "Feeling queasy" row
    gateway, transport = gateway_with(['{"id": "HP:0002018", "name": "Nausea"}'])
    result = map_term("stomach upset", hpo_graph(), hpo_matrix(), query, gateway)
    assert result.stage == "llm"
    assert result.target == "HP:0002018"
    assert result.score == pytest.approx(1.0, abs=1e-9)
    assert transport.calls == 1


def test_always_malformed_falls_back_after_three_attempts():
    gateway, transport = gateway_with(["garbage"] * 10)
    query = np.array([0.0, 1.0, 0.0])
    result = map_term("blorbitude", hpo_graph(), hpo_matrix(), query, gateway)
    assert result.stage == "fallback"
    assert result.target == "HP:0000001"
    assert result.attempts == 3
    assert transport.calls == 3         # max_retries=0: one call per attempt


def test_unknown_id_then_valid():
    responses = ['{"id": "HP:9999999", "name": "Nope"}',
                 '{"id": "HP:0002018", "name": "Nausea"}']
    gateway, _ = gateway_with(responses)
    query = np.array([0.0, 1.0, 0.0])
    result = map_term("queasiness", hpo_graph(), hpo_matrix(), query, gateway)
    assert result.stage == "llm"
    assert result.attempts == 2


def test_name_mismatch_rejected():
    responses = ['{"id": "HP:0002018", "name": "Headache"}'] * 3
    gateway, _ = gateway_with(responses)
    query = np.array([0.0, 1.0, 0.0])
    result = map_term("queasiness", hpo_graph(), hpo_matrix(), query, gateway)
    assert result.stage == "fallback"
    assert result.attempts == 3


def test_name_validation_is_case_insensitive():
    gateway, _ = gateway_with(['{"id": "HP:0002018", "name": "  nausea "}'])
    query = np.array([0.0, 1.0, 0.0])
    result = map_term("queasiness", hpo_graph(), hpo_matrix(), query, gateway)
    assert result.stage == "llm"


def test_no_vector_no_exact_falls_back_immediately():
    gateway, transport = gateway_with([])
    result = map_term("unknownium", hpo_graph(), hpo_matrix(), None, gateway)
    assert result.stage == "fallback"
    assert result.attempts == 0
    assert transport.calls == 0


def test_semantic_floor_short_circuit():
    gateway, transport = gateway_with([])
    query = np.array([0.0, 0.9, 0.1])
    result = map_term("stomach upset", hpo_graph(), hpo_matrix(), query,
                      gateway, accept_semantic_score=0.99)
    assert result.stage == "semantic"
    assert result.target == "HP:0002018"
    assert result.score == pytest.approx(1.0, abs=1e-9)
    assert transport.calls == 0


def test_mapped_target_always_in_graph():
    gateway, _ = gateway_with(["garbage"] * 10)
    graph = hpo_graph()
    for term in ("Headache", "dizzy spells", "blorbitude"):
        result = map_term(term, graph, hpo_matrix(),
                          np.array([1.0, 0.0, 0.0]), gateway)
        assert result.target in graph


def test_keyword_classification_skips_gateway():
    gateway, transport = gateway_with([])
    assert classify_term("hypersensitivity to aspirin", gateway) == \
        Category.ALLERGY_OR_HYPERSENSITIVITY
    assert classify_term("Anaphylaxis history", gateway) == \
        Category.ALLERGY_OR_HYPERSENSITIVITY
    assert classify_term("known ALLERGIC reaction", gateway) == \
        Category.ALLERGY_OR_HYPERSENSITIVITY
    assert transport.calls == 0


def test_classify_term_routes_to_llm():
    gateway, _ = gateway_with(['[{"index": 1, "category": "Disease"}]'])
    assert classify_term("renal failure", gateway) == Category.DISEASE


def test_classify_terms_batches_in_arrival_order():
    gateway, transport = gateway_with([
        json.dumps([{"index": i, "category": "Disease"} for i in range(1, 16)]),
        json.dumps([{"index": 1, "category": "Phenotype"}]),
    ])
    terms = [f"condition {i}" for i in range(16)]
    terms.insert(3, "hypersensitivity")     # keyword term, not batched
    out = classify_terms(terms, gateway)
    assert out[3] == Category.ALLERGY_OR_HYPERSENSITIVITY
    assert out.count(Category.DISEASE) == 15
    assert out.count(Category.PHENOTYPE) == 1
    assert transport.calls == 2


def test_extract_drug_entities_stop_phrase():
    assert extract_drug_entities("coadministration with warfarin") == ["warfarin"]


def test_extract_drug_entities_delimiters():
    assert extract_drug_entities("aspirin, ibuprofen and naproxen") == \
        ["aspirin", "ibuprofen", "naproxen"]
    assert extract_drug_entities("a / b; c or d") == ["a", "b", "c", "d"]


def test_extract_drug_entities_empty():
    assert extract_drug_entities("") == []


def test_extract_drug_entities_custom_ner():
    ner = lambda text: ["warfarin sodium"]
    assert extract_drug_entities("anything", ner=ner) == ["warfarin sodium"]


@pytest.fixture
def rxnav(tmp_path):
    fixtures = {
        "rxcui": {"warfarin": "11289"},
        "approximateTerm": {"warfariin": ["999", "11289"],
                            "metforminol": ["600001", "600002"]},
        "related_ingredients": {"11289": ["11289"], "999": [],
                                "600002": ["600010"]},
        "name": {"11289": "warfarin"},
    }
    path = tmp_path / "rxnav.json"
    path.write_text(json.dumps(fixtures))
    return ReplayRxNavClient(path)


def test_resolve_drug_exact(rxnav):
    out = resolve_drug("warfarin", rxnav)
    assert out.group == "resolved"
    assert out.rxcuis == ["11289"]
    assert rxnav.calls.get("approximateTerm", 0) == 0


def test_resolve_drug_approximate_first_with_ingredients(rxnav):
    out = resolve_drug("metforminol", rxnav)
    assert out.group == "resolved"
    assert out.rxcuis == ["600010"]     # 600001 had no IN ingredients


def test_resolve_drug_gibberish_is_other(rxnav):
    out = resolve_drug("zzz gibberish zzz", rxnav)
    assert out.group == "other"
    assert out.rxcuis == []


def test_resolve_drug_multi_entity_partial(rxnav):
    out = resolve_drug("warfarin and unknownium", rxnav)
    assert out.group == "resolved"
    assert out.rxcuis == ["11289"]
    assert out.entities == ["warfarin", "unknownium"]


def resources_with(rxnav, script):
    gateway, transport = gateway_with(script)
    mondo = make_graph([("MONDO:0004979", "MONDO:0000001")],
                       names={"MONDO:0000001": "disease or disorder",
                              "MONDO:0004979": "asthma"})
    return MappingResources(
        hpo_graph=hpo_graph(), hpo_matrix=hpo_matrix(),
        mondo_graph=mondo,
        mondo_matrix=EmbeddingMatrix(3, "test", []),
        gateway=gateway, rxnav=rxnav,
    ), transport


def test_route_phenotype_to_hpo(rxnav):
    resources, _ = resources_with(rxnav, [])
    routed = route_mapping("Headache", Category.PHENOTYPE, resources)
    assert routed.route == "hpo"
    assert routed.mapping.target == "HP:0002315"


def test_route_disease_to_mondo(rxnav):
    resources, _ = resources_with(rxnav, [])
    routed = route_mapping("asthma", Category.DISEASE, resources)
    assert routed.route == "mondo"
    assert routed.mapping.target == "MONDO:0004979"


def test_route_drug_to_rxnav(rxnav):
    resources, _ = resources_with(rxnav, [])
    routed = route_mapping("warfarin", Category.DRUG_OR_CHEMICAL, resources)
    assert routed.route == "drug"
    assert routed.resolution.rxcuis == ["11289"]


@pytest.mark.parametrize("category", [
    Category.ALLERGY_OR_HYPERSENSITIVITY, Category.PATIENT_POPULATION,
    Category.PROCEDURE, Category.OTHER,
])
def test_route_excluded_categories(rxnav, category):
    resources, _ = resources_with(rxnav, [])
    routed = route_mapping("anything", category, resources)
    assert routed.route == "unrouted"
    assert routed.mapping is None and routed.resolution is None


def test_route_is_pure_in_category(rxnav):
    resources, _ = resources_with(rxnav, [])
    for term in ("x", "y", "anything else"):
        assert route_mapping(term, Category.PROCEDURE, resources).route == \
            "unrouted"


def test_keyword_category_negative():
    assert keyword_category("renal failure") is None
