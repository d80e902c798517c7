"""Provider-agnostic chat-completion client with structured-output parsing.

Three layers:

* ``complete`` sends one request (remote JSON chat endpoint with bounded
  retries, or the deterministic mock) and returns raw text.
* ``complete_structured`` demands the answer inside a fenced code block,
  validates it against an expected shape (ranked id list, id->score map,
  profile document, pair choice, explanation map), and re-asks with an
  error-describing turn on validation failure, up to the retry budget.
* ``mock_complete`` is an offline provider: a pure function of
  (stage tag, prompt content, seed) that answers every pipeline stage from a
  keyword-overlap heuristic, so the whole system runs deterministically with
  no network or model weights.

API keys are only ever read from the environment at call time and never
appear in logs or error text.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources

from .profiles import schema as profschema


class GatewayError(Exception):
    pass


class PromptTooLong(GatewayError):
    pass


class ProviderUnavailable(GatewayError):
    pass


class UnknownStage(GatewayError):
    pass


class MalformedOutput(GatewayError):
    """Validation still failing after the repair budget; carries the raw text."""

    def __init__(self, reason: str, raw: str):
        super().__init__(f"structured output invalid after retries: {reason}")
        self.reason = reason
        self.raw = raw


@dataclass
class ChatRequest:
    system_prompt: str
    turns: list[tuple[str, str]]          # (role, text), alternating, user first
    temperature: float = 0.0
    max_output_tokens: int = 1024
    tag: str = ""

    def prompt_chars(self) -> int:
        return len(self.system_prompt) + sum(len(t) for _, t in self.turns)

    def all_user_text(self) -> str:
        return "\n".join(t for role, t in self.turns if role == "user")


@dataclass
class ChatResponse:
    text: str
    provider_id: str
    latency_ms: int = 0


@dataclass
class ProviderConfig:
    kind: str = "mock"                    # mock | remote
    endpoint: str = ""
    model_name: str = "mock"
    api_key_env: str = ""
    max_retries: int = 3                  # total attempts (transport and repair)
    seed: int = 0                         # mock only
    max_prompt_chars: int = 100_000
    response_path: str = "choices.0.message.content"
    parallelism: int = 4


EXPECTED_KINDS = ("ranked_id_list", "id_score_list", "profile_doc", "pair_choice",
                  "explanation_map")

_limiters: dict[str, threading.BoundedSemaphore] = {}
_limiters_lock = threading.Lock()


def _limiter(config: ProviderConfig) -> threading.BoundedSemaphore:
    key = f"{config.endpoint}|{config.parallelism}"
    with _limiters_lock:
        if key not in _limiters:
            _limiters[key] = threading.BoundedSemaphore(max(1, config.parallelism))
        return _limiters[key]


def load_template(name: str) -> str:
    return resources.files("semrec.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def fill_template(template: str, **values: str) -> str:
    """Substitute {name} placeholders literally (no str.format, so braces in
    template prose or JSON examples are inert)."""
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


def _validate_request(request: ChatRequest, config: ProviderConfig) -> None:
    expected_role = "user"
    for role, _ in request.turns:
        if role != expected_role:
            raise GatewayError(f"turns must alternate starting with user, got {role!r}")
        expected_role = "assistant" if expected_role == "user" else "user"
    if not request.turns:
        raise GatewayError("request has no turns")
    if request.prompt_chars() > config.max_prompt_chars:
        raise PromptTooLong(
            f"prompt is {request.prompt_chars()} chars, limit {config.max_prompt_chars}")


def complete(request: ChatRequest, config: ProviderConfig,
             transport=None, sleep=time.sleep) -> ChatResponse:
    """Send one chat request; retries transient transport failures with backoff."""
    _validate_request(request, config)
    if config.kind == "mock":
        return mock_complete(request, config.seed)
    if config.kind != "remote":
        raise ValueError(f"unknown provider kind {config.kind!r}")

    import requests

    headers = {"Content-Type": "application/json"}
    key = os.environ.get(config.api_key_env or "", "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    messages = []
    if request.system_prompt:
        messages.append({"role": "system", "content": request.system_prompt})
    messages.extend({"role": role, "content": text} for role, text in request.turns)
    payload = {
        "model": config.model_name,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }
    attempts = max(1, config.max_retries)
    last = None
    for attempt in range(attempts):
        started = time.perf_counter()
        try:
            with _limiter(config):
                if transport is not None:
                    doc = transport(config.endpoint, payload, headers)
                else:
                    resp = requests.post(config.endpoint, json=payload, headers=headers,
                                         timeout=120)
                    resp.raise_for_status()
                    doc = resp.json()
            text = _dig(doc, config.response_path)
            if not isinstance(text, str) or not text:
                raise GatewayError("provider returned empty text")
            latency = int((time.perf_counter() - started) * 1000)
            return ChatResponse(text=text, provider_id=config.model_name, latency_ms=latency)
        except Exception as exc:
            last = exc
            if attempt + 1 < attempts:
                sleep(min(0.25 * (2 ** attempt), 4.0))
    raise ProviderUnavailable(
        f"provider {config.model_name!r} failed after {attempts} attempts: {type(last).__name__}")


def _dig(doc, path: str):
    cur = doc
    for part in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        else:
            cur = cur[part]
    return cur


_FENCE_RE = re.compile(r"```[a-zA-Z]*[ \t]*\n?(.*?)```", re.DOTALL)
_CANDIDATES_RE = re.compile(r"^candidates:\s*([0-9,\s]+?)\s*$", re.MULTILINE)


def candidate_ids_in_prompt(request: ChatRequest) -> list[int]:
    """The ids named on the last `candidates:` line of the user turns."""
    matches = _CANDIDATES_RE.findall(request.all_user_text())
    if not matches:
        return []
    return [int(tok) for tok in matches[-1].replace(",", " ").split()]


def _extract_fenced(text: str) -> str | None:
    m = _FENCE_RE.search(text)
    return m.group(1).strip() if m else None


def _check_structure(block: str, expected: str, candidates: list[int]):
    """Parse + validate one fenced block; raises ValueError with the reason."""
    if expected == "profile_doc":
        pos = -1
        for name in profschema.SECTIONS:
            nxt = block.find(f"## {name}")
            if nxt < 0 or nxt < pos:
                raise ValueError(f"profile document missing or misordered section {name}")
            pos = nxt
        return block
    cand_set = set(candidates)
    if expected == "ranked_id_list":
        data = json.loads(block)
        if not isinstance(data, list) or not all(isinstance(x, int) for x in data):
            raise ValueError("expected a JSON array of integer ids")
        if len(data) != len(cand_set) or set(data) != cand_set:
            raise ValueError("ranking must use every candidate id exactly once")
        return [int(x) for x in data]
    if expected == "id_score_list":
        data = json.loads(block)
        if isinstance(data, list):
            data = {pair[0]: pair[1] for pair in data}
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object mapping id to score")
        parsed = {}
        for k, v in data.items():
            ident = int(k)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v != int(v):
                raise ValueError(f"score for id {ident} is not an integer")
            score = int(v)
            if not (0 <= score <= 100):
                raise ValueError(f"score for id {ident} outside 0..100")
            parsed[ident] = score
        if set(parsed) != cand_set:
            raise ValueError("scores must cover every candidate id exactly once")
        return parsed
    if expected == "pair_choice":
        try:
            data = json.loads(block)
        except json.JSONDecodeError:
            data = block.strip()
        if isinstance(data, list) and len(data) == 1:
            data = data[0]
        choice = int(data)
        if choice not in cand_set:
            raise ValueError(f"choice {choice} is not one of the candidates")
        return choice
    if expected == "explanation_map":
        data = json.loads(block)
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object mapping id to explanation")
        parsed = {}
        for k, v in data.items():
            ident = int(k)
            if not isinstance(v, dict) or not isinstance(v.get("text"), str) or not v["text"].strip():
                raise ValueError(f"explanation for id {ident} lacks non-empty text")
            tags = v.get("tags", [])
            if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
                raise ValueError(f"tags for id {ident} must be a list of strings")
            parsed[ident] = {"text": v["text"].strip(), "tags": list(tags)}
        if set(parsed) != cand_set:
            raise ValueError("explanations must cover every candidate id exactly once")
        return parsed
    raise ValueError(f"unknown expected kind {expected!r}")


def complete_structured(request: ChatRequest, expected: str, config: ProviderConfig,
                        transport=None, sleep=time.sleep):
    """Run ``complete`` and parse the first fenced block against ``expected``.

    On validation failure the raw reply and an error-explaining user turn are
    appended and the model is re-asked; after ``max_retries`` total attempts
    the caller gets MalformedOutput with the last raw text so it can apply
    its own fallback.
    """
    if expected not in EXPECTED_KINDS:
        raise ValueError(f"expected must be one of {EXPECTED_KINDS}")
    candidates = candidate_ids_in_prompt(request)
    attempts = max(1, config.max_retries)
    turns = list(request.turns)
    raw = ""
    reason = "no attempts made"
    for _ in range(attempts):
        attempt_req = ChatRequest(
            system_prompt=request.system_prompt,
            turns=turns,
            temperature=request.temperature,
            max_output_tokens=request.max_output_tokens,
            tag=request.tag,
        )
        try:
            raw = complete(attempt_req, config, transport=transport, sleep=sleep).text
        except (ProviderUnavailable, PromptTooLong):
            raise
        block = _extract_fenced(raw)
        if block is None:
            reason = "reply contains no fenced code block"
        else:
            try:
                return _check_structure(block, expected, candidates)
            except (ValueError, json.JSONDecodeError) as exc:
                reason = str(exc)
        turns = turns + [
            ("assistant", raw),
            ("user", f"Your previous reply was invalid: {reason}. "
                     "Answer again, strictly following the required format."),
        ]
    raise MalformedOutput(reason, raw)


class Gateway:
    """Config + optional transport bundled for threading through the pipeline."""

    def __init__(self, config: ProviderConfig, transport=None, sleep=time.sleep):
        self.config = config
        self.transport = transport
        self.sleep = sleep

    def complete(self, request: ChatRequest) -> ChatResponse:
        return complete(request, self.config, transport=self.transport, sleep=self.sleep)

    def complete_structured(self, request: ChatRequest, expected: str):
        return complete_structured(request, expected, self.config,
                                   transport=self.transport, sleep=self.sleep)


# --------------------------------------------------------------------------
# deterministic mock provider
# --------------------------------------------------------------------------

_VIEWER_RE = re.compile(r"\[viewer profile\]\n(.*?)\n\[/viewer profile\]", re.DOTALL)
_CAND_RE = re.compile(r"\[candidate (\d+)\]\n(.*?)\n\[/candidate \1\]", re.DOTALL)
_PRIOR_RE = re.compile(r"\[prior profile\]\n(.*?)\n\[/prior profile\]", re.DOTALL)
_SEED_RE = re.compile(r"\[seed item (\d+) (liked|disliked)\]\n(.*?)\n\[/seed item \1\]",
                      re.DOTALL)
_META_LINE_RE = re.compile(r"^(item|title|genres|overview):\s*(.*)$", re.MULTILINE)
_WORD_RE = re.compile(r"[a-z][a-z0-9]{4,}")


def _profile_tags(markdown: str) -> tuple[list[str], list[str]]:
    """(attributes, dislikes) of a profile document; tolerant of plain text."""
    try:
        prof = profschema.parse_profile(markdown)
        return prof.attributes, prof.dislikes
    except profschema.ProfileError:
        pass
    m = re.search(r"genres:\s*([^.]*)\.", markdown)
    if m:
        tags = [t.strip().lower() for t in m.group(1).split(",") if t.strip()]
        return profschema.normalize_tags(tags), []
    return profschema.normalize_tags(_WORD_RE.findall(markdown.lower())[:3]), []


def _overlap_score(user_attrs: list[str], user_dislikes: list[str],
                   item_attrs: list[str]) -> int:
    """100 * |shared| / |union| with shared dislikes subtracting, clamped to 0..100."""
    a, d, i = set(user_attrs), set(user_dislikes), set(item_attrs)
    union = a | i
    if not union:
        return 0
    raw = 100.0 * (len(a & i) - len(d & i)) / len(union)
    return max(0, min(100, int(round(raw))))


def _mock_candidate_scores(prompt: str) -> dict[int, int]:
    viewer = _VIEWER_RE.search(prompt)
    attrs, dislikes = _profile_tags(viewer.group(1)) if viewer else ([], [])
    scores = {}
    for ident, body in _CAND_RE.findall(prompt):
        item_attrs, _ = _profile_tags(body)
        scores[int(ident)] = _overlap_score(attrs, dislikes, item_attrs)
    return scores


def _fenced(payload: str, lang: str = "") -> str:
    return f"```{lang}\n{payload}\n```"


def _mock_item_profile(prompt: str) -> str:
    fields = dict(_META_LINE_RE.findall(prompt))
    title = fields.get("title", "unknown").strip() or "unknown"
    genres = [g.strip() for g in fields.get("genres", "").split(",") if g.strip()]
    overview = fields.get("overview", "").strip()
    derived = []
    for tok in _WORD_RE.findall(overview.lower()):
        if tok not in derived and tok not in [g.lower() for g in genres]:
            derived.append(tok)
        if len(derived) == 2:
            break
    prof = profschema.Profile(
        subject_kind="item",
        subject_id=int(fields.get("item", "0") or 0),
        overview=overview or title,
        attributes=genres + derived,
        description=overview or title,
        dislikes=[],
    )
    return _fenced(profschema.render_profile(prof).rstrip("\n"))


def _mock_user_profile(prompt: str) -> str:
    prior_m = _PRIOR_RE.search(prompt)
    attrs: list[str] = []
    dislikes: list[str] = []
    if prior_m and prior_m.group(1).strip().lower() != "none":
        attrs, dislikes = _profile_tags(prior_m.group(1))
    n_liked = n_disliked = 0
    for _ident, polarity, body in _SEED_RE.findall(prompt):
        item_attrs, _ = _profile_tags(body)
        if polarity == "liked":
            attrs.extend(item_attrs)
            n_liked += 1
        else:
            dislikes.extend(item_attrs)
            n_disliked += 1
    attrs = sorted(set(profschema.normalize_tags(attrs)))
    dislikes = sorted(set(profschema.normalize_tags(dislikes)) - set(attrs))
    if attrs:
        overview = f"Drawn to {', '.join(attrs[:3])}."
    elif dislikes:
        overview = f"Mostly avoids {', '.join(dislikes[:3])}."
    else:
        overview = "Still forming tastes."
    description = ("Built from rated-item batches; favors "
                   + (", ".join(attrs[:6]) if attrs else "nothing strongly yet") + ".")
    prof = profschema.Profile(
        subject_kind="user",
        subject_id=0,
        overview=overview,
        attributes=attrs,
        description=description,
        dislikes=dislikes,
    )
    return _fenced(profschema.render_profile(prof).rstrip("\n"))


def _mock_explanations(prompt: str) -> str:
    viewer = _VIEWER_RE.search(prompt)
    attrs, _ = _profile_tags(viewer.group(1)) if viewer else ([], [])
    out = {}
    for ident, body in _CAND_RE.findall(prompt):
        item_attrs, _ = _profile_tags(body)
        shared = sorted(set(attrs) & set(item_attrs))
        if shared:
            out[ident] = {"text": f"Shares the {shared[0]} thread the viewer favors.",
                          "tags": [shared[0]]}
        else:
            out[ident] = {"text": "Broadens the slate beyond the viewer's usual tags.",
                          "tags": []}
    return _fenced(json.dumps(out, sort_keys=True), "json")


def mock_complete(request: ChatRequest, seed: int = 0) -> ChatResponse:
    """Deterministic offline provider; output is a pure function of
    (stage tag, prompt content, seed)."""
    stage = (request.tag or "").split("/")[0].split(":")[0]
    prompt = request.system_prompt + "\n" + "\n".join(t for _, t in request.turns)
    if stage == "profile_item":
        text = _mock_item_profile(prompt)
    elif stage == "profile_user":
        text = _mock_user_profile(prompt)
    elif stage in ("rerank_list", "rerank_batch"):
        scores = _mock_candidate_scores(prompt)
        order = sorted(scores, key=lambda i: (-scores[i], i))
        text = _fenced(json.dumps(order), "json")
    elif stage == "rerank_pair":
        scores = _mock_candidate_scores(prompt)
        if not scores:
            text = _fenced("0")
        else:
            choice = min(scores, key=lambda i: (-scores[i], i))
            text = _fenced(str(choice))
    elif stage == "rerank_score":
        scores = _mock_candidate_scores(prompt)
        text = _fenced(json.dumps({str(k): v for k, v in sorted(scores.items())},
                                  sort_keys=True), "json")
    elif stage == "explain":
        text = _mock_explanations(prompt)
    else:
        raise UnknownStage(f"mock provider cannot serve stage tag {request.tag!r}")
    return ChatResponse(text=text, provider_id=f"mock:{seed}", latency_ms=0)
