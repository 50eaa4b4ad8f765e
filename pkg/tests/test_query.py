import pytest

from sidekick.kg import (
    AssociationNode,
    DatasetMetadata,
    DocumentNode,
    DrugCollectionNode,
    build_graph,
    curie_to_iri,
)
from sidekick.ontology import TermNotFoundError
from sidekick.query import (
    QuerySpec,
    Question,
    default_questions,
    drugs_under,
    run_competency_suite,
    run_question,
)

from conftest import make_graph

META = DatasetMetadata(description="q", created="2025-01-01",
                       creator="t", license="CC0")

HPO = make_graph(
    [("HP:0000118", "HP:0000001"),
     ("HP:0001626", "HP:0000118"),          # cardiovascular
     ("HP:0000822", "HP:0001626"),          # hypertension
     ("HP:0000077", "HP:0000118"),          # kidney abnormality
     ("HP:0012622", "HP:0000077")],         # chronic kidney disease
    names={"HP:0000001": "All", "HP:0000118": "Phenotypic abnormality",
           "HP:0001626": "Abnormality of the cardiovascular system",
           "HP:0000822": "Hypertension", "HP:0000077": "Abnormality of the kidney",
           "HP:0012622": "Chronic kidney disease"},
)
MONDO = make_graph(
    [("MONDO:0005550", "MONDO:0000001"), ("MONDO:0018076", "MONDO:0005550"),
     ("MONDO:0001106", "MONDO:0000001")],
    names={"MONDO:0000001": "disease or disorder",
           "MONDO:0005550": "infectious disease",
           "MONDO:0018076": "tuberculosis",
           "MONDO:0001106": "kidney failure"},
)
GRAPHS = {"hpo": HPO, "mondo": MONDO}


def synthetic_kg():
    c1 = DrugCollectionNode.from_members(["101"], label="Drug X")
    c2 = DrugCollectionNode.from_members(["202"], label="Drug Y")
    d1 = DocumentNode(set_id="doc-1")
    associations = [
        AssociationNode(kind="SideEffect", drug=c1.iri,
                        target=curie_to_iri("HP:0000822"), sources=[d1.iri]),
        AssociationNode(kind="PhenotypeContraindication", drug=c2.iri,
                        target=curie_to_iri("HP:0012622"), sources=[d1.iri]),
        AssociationNode(kind="DiseaseContraindication", drug=c1.iri,
                        target=curie_to_iri("MONDO:0001106"), sources=[d1.iri],
                        target_label="kidney failure"),
        AssociationNode(kind="DiseaseIndication", drug=c2.iri,
                        target=curie_to_iri("MONDO:0018076"), sources=[d1.iri]),
    ]
    return build_graph([], [c1, c2], associations, META, [d1]), c1, c2


def test_one_hop_closure_side_effect():
    triples, c1, _ = synthetic_kg()
    spec = QuerySpec(kinds={"SideEffect"}, ontology="hpo", root="HP:0001626")
    result = drugs_under(triples, GRAPHS, spec)
    assert {d for d, _ in result.drugs} == {c1.iri}
    assert result.matches[0].target == "HP:0000822"
    assert result.matches[0].target_label == "Hypertension"
    assert result.matches[0].drug_label == "Drug X"


def test_empty_kg_empty_result():
    triples = build_graph([], [], [], META, [])
    spec = QuerySpec(kinds={"SideEffect"}, ontology="hpo", root="HP:0000001")
    result = drugs_under(triples, GRAPHS, spec)
    assert result.drugs == set()
    assert result.matches == []


def test_renal_union_question():
    triples, c1, c2 = synthetic_kg()
    question = Question("kidney_contraindications", [
        QuerySpec(kinds={"PhenotypeContraindication"}, ontology="hpo",
                  root="HP:0000077"),
        QuerySpec(kinds={"DiseaseContraindication"}, ontology="mondo",
                  label_contains=["renal", "kidney"]),
    ])
    result = run_question(triples, GRAPHS, question)
    assert {d for d, _ in result.drugs} == {c1.iri, c2.iri}
    kinds = {m.kind for m in result.matches}
    assert kinds == {"PhenotypeContraindication", "DiseaseContraindication"}


def test_kind_filter_respected():
    triples, _, c2 = synthetic_kg()
    spec = QuerySpec(kinds={"DiseaseIndication"}, ontology="mondo",
                     root="MONDO:0005550")
    result = drugs_under(triples, GRAPHS, spec)
    assert {d for d, _ in result.drugs} == {c2.iri}


def test_monotone_in_root():
    triples, *_ = synthetic_kg()
    broad = drugs_under(triples, GRAPHS, QuerySpec(
        kinds={"SideEffect"}, ontology="hpo", root="HP:0000001"))
    narrow = drugs_under(triples, GRAPHS, QuerySpec(
        kinds={"SideEffect"}, ontology="hpo", root="HP:0000822"))
    assert narrow.drugs <= broad.drugs


def test_root_query_returns_all_side_effect_drugs():
    triples, c1, _ = synthetic_kg()
    result = drugs_under(triples, GRAPHS, QuerySpec(
        kinds={"SideEffect"}, ontology="hpo", root="HP:0000001"))
    assert {d for d, _ in result.drugs} == {c1.iri}


def test_order_independence():
    triples, *_ = synthetic_kg()
    spec = QuerySpec(kinds={"SideEffect"}, ontology="hpo", root="HP:0001626")
    a = drugs_under(sorted(triples), GRAPHS, spec)
    b = drugs_under(sorted(triples, reverse=True), GRAPHS, spec)
    assert a.drugs == b.drugs


def test_unknown_root_errors():
    triples, *_ = synthetic_kg()
    with pytest.raises(TermNotFoundError):
        drugs_under(triples, GRAPHS, QuerySpec(
            kinds={"SideEffect"}, ontology="hpo", root="HP:9999999"))


def test_spec_validation():
    with pytest.raises(ValueError):
        QuerySpec(kinds={"SideEffect"}, ontology="hpo")
    with pytest.raises(ValueError):
        QuerySpec(kinds={"NotAKind"}, ontology="hpo", root="HP:0000001")


def test_drugs_projection_invariant():
    triples, *_ = synthetic_kg()
    spec = QuerySpec(kinds={"SideEffect", "DiseaseContraindication"},
                     ontology="hpo", root="HP:0000001")
    result = drugs_under(triples, GRAPHS, spec)
    assert result.drugs == {(m.drug, m.drug_label) for m in result.matches}


def test_default_questions_roots():
    questions = {q.name: q for q in default_questions()}
    assert questions["cardiovascular_side_effects"].specs[0].root == "HP:0001626"
    assert questions["nervous_system_side_effects"].specs[0].root == "HP:0000707"
    assert questions["arrhythmia_side_effects"].specs[0].root == "HP:0011675"
    assert questions["metabolic_side_effects"].specs[0].root == "HP:0001939"
    assert questions["infectious_disease_indications"].specs[0].root == \
        "MONDO:0005550"
    kidney = questions["kidney_contraindications"]
    assert kidney.specs[0].root == "HP:0000077"
    assert kidney.specs[1].label_contains == ["renal", "kidney"]
    assert len(questions) == 6


def test_suite_counts_match_hand_enumeration():
    triples, c1, c2 = synthetic_kg()
    questions = [
        Question("cardio", [QuerySpec(kinds={"SideEffect"}, ontology="hpo",
                                      root="HP:0001626")]),
        Question("kidney", [
            QuerySpec(kinds={"PhenotypeContraindication"}, ontology="hpo",
                      root="HP:0000077"),
            QuerySpec(kinds={"DiseaseContraindication"}, ontology="mondo",
                      label_contains=["renal", "kidney"]),
        ]),
        Question("infectious", [QuerySpec(kinds={"DiseaseIndication"},
                                          ontology="mondo",
                                          root="MONDO:0005550")]),
    ]
    rows = run_competency_suite(triples, GRAPHS, questions)
    counts = {name: count for name, count, _ in rows}
    assert counts == {"cardio": 1, "kidney": 2, "infectious": 1}
