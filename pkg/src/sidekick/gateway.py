"""Chat-completion gateway: transports, retries, and prompt programs.

The gateway speaks an OpenAI-compatible chat-completions body. Transports
are pluggable: a live HTTP client, a replay client that answers from
canned request/response files keyed by a request content hash, and a
journaling wrapper that records live traffic into the same file format so
replay fixtures can be harvested from real runs. Sleeps go through an
injectable clock so tests run instantly.

Three prompt programs sit on top of ``complete``: clinical-entity
extraction (XML envelope), seven-way term classification (JSON array),
and candidate disambiguation (JSON object).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, replace
from pathlib import Path
from xml.etree import ElementTree

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://openrouter.ai/api/v1/chat/completions"
DEFAULT_API_KEY_ENV = "OPENROUTER_API_KEY"

EXTRACTION_PROMPT = """\
You are an expert in extracting information from FDA drug labels. I have provided the text from a drug package label. Please extract the following information in a structured format:

IMPORTANT: Only respond with the extracted XML. Do not repeat any part of these instructions or the input text in your response.

1. Indications (what the drug is used for)
2. Contraindications (when the drug should not be used)
3. Side effects (with frequencies if available)

For each indication, contraindication, side effect, provide only one item per tag and include the exact line from the text that contains this information. Extract any and all indications, contraindications, side effects you find.

It is important to note that these side effects, indications and contraindications can be found in sections other than the ones specifically dedicated for them so search carefully across the entire text and find all of them.

Try to keep the indication, contraindication and side-effect names that you extract as short and straightforward as possible but accuracy is important.

Provide your response in the following XML format:

<drug_information>
  <indications>
    <indication>
      <indication_name>INDICATION NAME</indication_name>
    </indication>
  </indications>
  <contraindications>
    <contraindication>
      <contraindication_name>CONTRAINDICATION NAME</contraindication_name>
    </contraindication>
  </contraindications>
  <side_effects>
    <side_effect>
      <side_effect_name>SIDE EFFECT NAME</side_effect_name>
    </side_effect>
  </side_effects>
</drug_information>"""

CATEGORY_DEFINITIONS = """\
1. Disease: Medical conditions, disorders, syndromes (e.g., "diabetes mellitus", "hypertension", "myocardial infarction")
2. Phenotype: Observable clinical signs, symptoms, or abnormalities (e.g., "seizures", "hypotension", "bradycardia")
3. Drug or Chemical: Drug interactions, concomitant medications, or chemical substances (e.g., "monoamine oxidase inhibitors", "warfarin", "alcohol")
4. Allergy or Hypersensitivity: Allergic reactions or hypersensitivity conditions
5. Patient Population: Demographics, life stages, or patient groups (e.g., "pregnancy", "pediatric patients", "elderly")
6. Procedure: Medical or surgical procedures (e.g., "surgery", "hemodialysis", "cardiac catheterization")
7. Other: Any terms that do not fit into the above categories"""

CLASSIFICATION_PROMPT = """\
You are classifying clinical terms taken from drug labels. Assign each numbered term below to exactly one of these seven categories:

{definitions}

Terms:
{terms}

Respond with only a JSON array, one object per term, of the form:
[{{"index": 1, "category": "Disease"}}, ...]"""

DISAMBIGUATION_PROMPT = """\
You are mapping a clinical term to the best-matching ontology class.

Term: "{term}"

Candidate classes (with retrieval scores):
{candidates}

Related classes for context:
{context}

Choose the single candidate (or closely related class) that best represents the term. Respond with only a JSON object of the form:
{{"id": "ONTOLOGY ID", "name": "class name"}}"""


class TransportError(Exception):
    """A transport-level failure; ``retryable`` drives the retry policy."""

    def __init__(self, message: str, retryable: bool):
        super().__init__(message)
        self.retryable = retryable


class GatewayError(Exception):
    """Retries exhausted or a fatal transport response."""


class ExtractionError(GatewayError):
    def __init__(self, set_id: str, reason: str):
        self.set_id = set_id
        super().__init__(f"extraction failed for {set_id}: {reason}")


class DisambiguationError(GatewayError):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str = DEFAULT_ENDPOINT
    model_id: str = "google/gemini-2.5-flash"
    temperature: float = 0.1
    max_tokens: int = 500
    max_retries: int = 3
    retry_delay: float = 2.0
    batch_size: int = 1
    inter_batch_sleep: float = 0.0
    api_key_env: str = DEFAULT_API_KEY_ENV

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def for_extraction(cls, **overrides) -> "GatewayConfig":
        base = cls(max_tokens=50_000, retry_delay=5.0, batch_size=500,
                   inter_batch_sleep=10.0)
        return replace(base, **overrides)

    @classmethod
    def for_mapping(cls, **overrides) -> "GatewayConfig":
        return replace(cls(max_tokens=500, retry_delay=2.0), **overrides)

    @classmethod
    def for_side_effects(cls, **overrides) -> "GatewayConfig":
        return replace(cls(max_tokens=1_000, retry_delay=2.0), **overrides)

    @classmethod
    def for_classification(cls, **overrides) -> "GatewayConfig":
        base = cls(model_id="google/gemini-2.5-flash-lite", max_tokens=1_000,
                   retry_delay=2.0)
        return replace(base, **overrides)


class SystemClock:
    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class FakeClock:
    """Records requested sleeps without waiting; for tests."""

    def __init__(self):
        self.sleeps: list[float] = []

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)


def request_key(body: dict) -> str:
    """Stable content hash of a request body (journal/replay file name)."""
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class LiveTransport:
    """HTTP chat-completions transport; API key read from the environment."""

    def __init__(self, config: GatewayConfig, timeout: float = 120.0):
        self.config = config
        self.timeout = timeout

    def send(self, body: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = requests.post(
                self.config.endpoint_url, json=body, headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}", retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(
                f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=True
            )
        if resp.status_code >= 400:
            raise TransportError(
                f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False
            )
        return resp.json()


class ReplayTransport:
    """Answers from journal files ``<request-hash>.json`` in a directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.calls = 0

    def send(self, body: dict) -> dict:
        self.calls += 1
        key = request_key(body)
        path = self.directory / f"{key}.json"
        if not path.exists():
            raise TransportError(
                f"no replay fixture {key}.json in {self.directory}", retryable=False
            )
        record = json.loads(path.read_text(encoding="utf-8"))
        return record["response"]


class JournalingTransport:
    """Wraps a transport and records request/response pairs to disk."""

    def __init__(self, inner, directory: str | Path):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def send(self, body: dict) -> dict:
        response = self.inner.send(body)
        path = self.directory / f"{request_key(body)}.json"
        path.write_text(
            json.dumps({"request": body, "response": response},
                       sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        return response


class ScriptedTransport:
    """Yields a fixed sequence of responses or exceptions; for tests."""

    def __init__(self, script: list):
        self.script = list(script)
        self.calls = 0

    @staticmethod
    def text_response(text: str) -> dict:
        return {"choices": [{"message": {"content": text}}]}

    def send(self, body: dict) -> dict:
        self.calls += 1
        if not self.script:
            raise TransportError("script exhausted", retryable=False)
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        if isinstance(item, str):
            return self.text_response(item)
        return item


def _content_of(response: dict) -> str:
    try:
        return response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion body: {exc}", retryable=True)


def complete(config: GatewayConfig, transport, prompt: str, clock=None) -> str:
    """One completion with retry on retryable transport errors.

    At most ``max_retries + 1`` transport calls; a fatal (non-retryable)
    error raises immediately.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    clock = clock or SystemClock()
    body = {
        "model": config.model_id,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "messages": [{"role": "user", "content": prompt}],
    }
    last: Exception | None = None
    for attempt in range(config.max_retries + 1):
        try:
            return _content_of(transport.send(body))
        except TransportError as exc:
            last = exc
            if not exc.retryable:
                raise GatewayError(f"fatal transport error: {exc}") from exc
            logger.warning("transport attempt %d failed: %s", attempt + 1, exc)
            if attempt < config.max_retries:
                clock.sleep(config.retry_delay)
    raise GatewayError(f"retries exhausted: {last}") from last


_FENCE_RE = re.compile(r"^```[A-Za-z0-9_-]*\s*\n|\n?```\s*$")


def strip_code_fences(text: str) -> str:
    """Remove one leading and one trailing triple-backtick fence."""
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = re.sub(r"^```[A-Za-z0-9_-]*[ \t]*\r?\n?", "", stripped)
    if stripped.rstrip().endswith("```"):
        stripped = re.sub(r"\r?\n?```\s*$", "", stripped)
    return stripped.strip()


@dataclass
class ExtractionResult:
    set_id: str
    indications: list[str]
    contraindications: list[str]
    side_effects: list[str]

    def to_dict(self) -> dict:
        return {
            "set_id": self.set_id,
            "indications": list(self.indications),
            "contraindications": list(self.contraindications),
            "side_effects": list(self.side_effects),
        }


def _dedup_case_insensitive(values: list[str]) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for value in values:
        key = value.strip().lower()
        if key and key not in seen:
            seen.add(key)
            out.append(value.strip())
    return out


def _parse_extraction_xml(text: str) -> tuple[list[str], list[str], list[str]] | None:
    cleaned = strip_code_fences(text)
    start = cleaned.find("<drug_information")
    end = cleaned.rfind("</drug_information>")
    if start == -1 or end == -1:
        return None
    try:
        root = ElementTree.fromstring(cleaned[start : end + len("</drug_information>")])
    except ElementTree.ParseError:
        return None
    buckets = {"indication_name": [], "contraindication_name": [], "side_effect_name": []}
    for elem in root.iter():
        tag = elem.tag.rsplit("}", 1)[-1]
        if tag in buckets and elem.text:
            buckets[tag].append(elem.text.strip())
    return (
        _dedup_case_insensitive(buckets["indication_name"]),
        _dedup_case_insensitive(buckets["contraindication_name"]),
        _dedup_case_insensitive(buckets["side_effect_name"]),
    )


def extract_entities(
    config: GatewayConfig, transport, label_text: str, set_id: str, clock=None
) -> ExtractionResult:
    """Run the extraction prompt over flattened label text.

    Malformed XML and empty envelopes are retried with fresh completions
    (up to ``max_retries`` retries) before giving up.
    """
    prompt = EXTRACTION_PROMPT + "\n\n" + label_text
    reason = "no attempt made"
    for _ in range(config.max_retries + 1):
        try:
            text = complete(config, transport, prompt, clock=clock)
        except GatewayError as exc:
            raise ExtractionError(set_id, str(exc)) from exc
        parsed = _parse_extraction_xml(text)
        if parsed is None:
            reason = "response was not a drug_information XML envelope"
            continue
        indications, contraindications, side_effects = parsed
        if not (indications or contraindications or side_effects):
            reason = "envelope contained no entities"
            continue
        return ExtractionResult(
            set_id=set_id,
            indications=indications,
            contraindications=contraindications,
            side_effects=side_effects,
        )
    raise ExtractionError(set_id, reason)


def _parse_json_payload(text: str):
    try:
        return json.loads(strip_code_fences(text))
    except json.JSONDecodeError:
        return None


def classify_batch(config: GatewayConfig, transport, terms: list[str], clock=None):
    """Classify up to 15 terms into the seven clinical categories.

    Returns one :class:`~sidekick.mapper.Category` per input term, in
    order. Unknown category strings and malformed entries map to Other;
    if the response never parses as JSON the whole batch falls back to
    Other with a warning.
    """
    from .mapper import Category  # deferred: mapper imports this module

    if not 1 <= len(terms) <= 15:
        raise ValueError("classify_batch takes between 1 and 15 terms")
    numbered = "\n".join(f"{i}. {t}" for i, t in enumerate(terms, start=1))
    prompt = CLASSIFICATION_PROMPT.format(
        definitions=CATEGORY_DEFINITIONS, terms=numbered
    )
    lookup = {c.value.lower(): c for c in Category}
    lookup.update({c.name.lower(): c for c in Category})

    for _ in range(config.max_retries + 1):
        try:
            text = complete(config, transport, prompt, clock=clock)
        except GatewayError as exc:
            logger.warning("classification batch failed: %s", exc)
            break
        payload = _parse_json_payload(text)
        if not isinstance(payload, list):
            continue
        result = [Category.OTHER] * len(terms)
        for entry in payload:
            if not isinstance(entry, dict):
                continue
            idx = entry.get("index")
            cat = entry.get("category")
            if isinstance(idx, int) and 1 <= idx <= len(terms) and isinstance(cat, str):
                result[idx - 1] = lookup.get(cat.strip().lower(), Category.OTHER)
        return result

    logger.warning("classification fell back to Other for %d terms", len(terms))
    return [Category.OTHER] * len(terms)


def disambiguate(
    config: GatewayConfig,
    transport,
    term: str,
    candidates: list[tuple[str, str, float, str | None]],
    context: list[tuple[str, str, str]],
    clock=None,
) -> tuple[str, str]:
    """Ask the model to pick an ontology id for ``term``.

    ``candidates`` are (id, name, score, definition) tuples; ``context``
    entries are (id, name, relation-tag). Returns the (id, name) pair
    from the JSON response; raises :class:`DisambiguationError` when no
    well-formed object arrives within the retry budget.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    cand_lines = "\n".join(
        f"- {cid} \"{name}\" (score {score:.4f}): {definition or 'no definition'}"
        for cid, name, score, definition in candidates
    )
    ctx_lines = "\n".join(
        f"- {cid} \"{name}\" [{tag}]" for cid, name, tag in context
    ) or "- none"
    prompt = DISAMBIGUATION_PROMPT.format(
        term=term, candidates=cand_lines, context=ctx_lines
    )

    for _ in range(config.max_retries + 1):
        try:
            text = complete(config, transport, prompt, clock=clock)
        except GatewayError as exc:
            raise DisambiguationError(str(exc)) from exc
        payload = _parse_json_payload(text)
        if (
            isinstance(payload, dict)
            and isinstance(payload.get("id"), str)
            and isinstance(payload.get("name"), str)
        ):
            return payload["id"], payload["name"]
    raise DisambiguationError(f"no parseable disambiguation for {term!r}")


def run_in_batches(items, fn, batch_size: int, inter_batch_sleep: float, clock=None):
    """Apply ``fn`` to items in input order, ``batch_size`` at a time,
    sleeping ``inter_batch_sleep`` seconds between batches."""
    clock = clock or SystemClock()
    results = []
    for start in range(0, len(items), batch_size):
        if start > 0 and inter_batch_sleep > 0:
            clock.sleep(inter_batch_sleep)
        for item in items[start : start + batch_size]:
            results.append(fn(item))
    return results


@dataclass
class Gateway:
    """Bundle of config + transport + clock passed through the mapper."""

    config: GatewayConfig
    transport: object
    clock: object = None

    def complete(self, prompt: str) -> str:
        return complete(self.config, self.transport, prompt, clock=self.clock)

    def classify(self, terms: list[str]):
        return classify_batch(self.config, self.transport, terms, clock=self.clock)

    def disambiguate(self, term, candidates, context) -> tuple[str, str]:
        return disambiguate(
            self.config, self.transport, term, candidates, context, clock=self.clock
        )
