"""Drug-label knowledge graph toolkit.

Pipeline modules: SPL corpus ingestion and deduplication, ontology
parsing, embedding retrieval, LLM-backed term mapping, RDF graph
construction with shape validation, semantic-similarity evaluation,
and hierarchy-aware competency queries.
"""

__version__ = "0.1.0"
