"""Chat-completion access: live OpenAI-compatible client, scripted mock, cache.

Also hosts answer extraction (2-round iterative prompting with up to three
attempts) and the Yes-token probability used for decision questions.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
import string
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .errors import (
    AuthError,
    FixtureMiss,
    LogprobsMissing,
    ParseError,
    ProviderRefusedLogprobs,
    TransportError,
    YesTokenAbsent,
)
from .resources import templates

ROLES = ("system", "user", "assistant")
REFUSAL = "refusal"
MAX_ATTEMPTS = 3
YES_FAMILY = ("yes",)
NO_FAMILY = ("no",)


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call.

    ``nonce`` tells apart deliberate repeats of the same conversation (the
    attempt number during answer extraction); it only enters the cache key
    when non-zero.
    """

    model: str
    turns: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    want_logprobs: bool = False
    top_logprobs: int = 5
    max_tokens: int = 512
    nonce: int = 0

    def __post_init__(self):
        turns = tuple((str(r), str(c)) for r, c in self.turns)
        object.__setattr__(self, "turns", turns)
        if not turns:
            raise ValueError("a chat request needs at least one turn")
        bad = [r for r, _ in turns if r not in ROLES]
        if bad:
            raise ValueError(f"unknown roles {bad}")

    def canonical(self) -> dict:
        doc = {
            "model": self.model,
            "turns": [[r, c] for r, c in self.turns],
            "temperature": self.temperature,
            "want_logprobs": self.want_logprobs,
            "max_tokens": self.max_tokens,
        }
        if self.nonce:
            doc["nonce"] = self.nonce
        return doc

    def cache_key(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def messages(self) -> list[dict]:
        return [{"role": r, "content": c} for r, c in self.turns]


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float
    alternatives: tuple[tuple[str, float], ...] = ()

    def to_dict(self) -> dict:
        return {"token": self.token, "logprob": self.logprob, "alternatives": [list(a) for a in self.alternatives]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TokenLogprob":
        return cls(d["token"], float(d["logprob"]), tuple((a[0], float(a[1])) for a in d.get("alternatives", ())))


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_logprobs: tuple[TokenLogprob, ...] | None = None
    finish_reason: str | None = "stop"
    provider_meta: Mapping[str, object] = field(default_factory=dict)
    cache_hit: bool = False

    def __post_init__(self):
        for t in self.token_logprobs or ():
            if t.logprob > 0 or any(lp > 0 for _, lp in t.alternatives):
                raise ValueError("logprobs must be <= 0")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "token_logprobs": None if self.token_logprobs is None else [t.to_dict() for t in self.token_logprobs],
            "finish_reason": self.finish_reason,
            "provider_meta": dict(self.provider_meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping, cache_hit: bool = False) -> "ChatResponse":
        lps = d.get("token_logprobs")
        return cls(
            d["text"],
            None if lps is None else tuple(TokenLogprob.from_dict(t) for t in lps),
            d.get("finish_reason"),
            dict(d.get("provider_meta") or {}),
            cache_hit,
        )


class Backend(Protocol):
    is_live: bool

    def complete(self, request: ChatRequest) -> ChatResponse: ...


# ---------------------------------------------------------------- live client


class OpenAICompatibleBackend:
    """Client for an OpenAI-style ``/chat/completions`` endpoint.

    Transport failures, 429 and 5xx responses are retried with exponential
    backoff (``backoff * 2**k`` seconds) up to ``max_attempts`` in total.
    """

    is_live = True

    def __init__(
        self,
        base_url: str,
        path: str = "/chat/completions",
        api_key_env: str = "OPENAI_API_KEY",
        supports_logprobs: bool = True,
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        self.url = base_url.rstrip("/") + "/" + path.lstrip("/")
        self.api_key_env = api_key_env
        self.supports_logprobs = supports_logprobs
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def check_credentials(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key

    def _payload(self, request: ChatRequest) -> dict:
        payload = {
            "model": request.model,
            "messages": request.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.want_logprobs:
            payload["logprobs"] = True
            payload["top_logprobs"] = request.top_logprobs
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        if request.want_logprobs and not self.supports_logprobs:
            raise ProviderRefusedLogprobs(f"{self.url} does not return logprobs")
        headers = {"Authorization": f"Bearer {self.check_credentials()}"}
        payload = self._payload(request)
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"provider rejected credentials ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                body = resp.text
                if request.want_logprobs and "logprob" in body.lower():
                    raise ProviderRefusedLogprobs(body[:200])
                raise TransportError(f"HTTP {resp.status_code}: {body[:200]}")
            return self._parse(resp.json(), request)
        raise TransportError(f"{self.url} failed after {self.max_attempts} attempts ({last_error})")

    @staticmethod
    def _parse(doc: dict, request: ChatRequest) -> ChatResponse:
        try:
            choice = doc["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        lps = None
        content = (choice.get("logprobs") or {}).get("content")
        if content:
            lps = tuple(
                TokenLogprob(
                    t["token"],
                    min(0.0, float(t["logprob"])),
                    tuple((a["token"], min(0.0, float(a["logprob"]))) for a in t.get("top_logprobs") or ()),
                )
                for t in content
            )
        if request.want_logprobs and not lps:
            raise ProviderRefusedLogprobs("provider returned no logprobs")
        meta = {k: doc[k] for k in ("id", "model", "usage") if k in doc}
        return ChatResponse(text, lps, choice.get("finish_reason"), meta)


# ---------------------------------------------------------------- mock model


def _logprob_tokens(text: str, table: Mapping[str, float]) -> tuple[TokenLogprob, ...]:
    alts = tuple(sorted(((k, float(v)) for k, v in table.items()), key=lambda kv: (-kv[1], kv[0])))
    top, lp = alts[0]
    return (TokenLogprob(top, lp, alts),)


@dataclass(frozen=True)
class MockRule:
    hash: str | None = None
    regex: str | None = None
    conversation_regex: str | None = None
    replies: tuple[Mapping[str, object], ...] = ()

    def matches(self, request: ChatRequest) -> bool:
        if self.hash is not None and self.hash != request.cache_key():
            return False
        if self.regex is not None and not re.search(self.regex, request.turns[-1][1], re.DOTALL):
            return False
        if self.conversation_regex is not None:
            convo = "\n".join(c for _, c in request.turns)
            if not re.search(self.conversation_regex, convo, re.DOTALL):
                return False
        return True

    def reply(self, request: ChatRequest) -> Mapping[str, object]:
        # repeated attempts walk through the scripted replies, then stay on the last
        return self.replies[min(request.nonce, len(self.replies) - 1)]


class MockModel:
    """Deterministic scripted model; first matching rule wins.

    A rule matches on any combination of ``hash`` (request cache key),
    ``regex`` (searched in the last turn) and ``conversation_regex``
    (searched in all turns). ``reply`` gives one response; ``replies`` a
    list indexed by the request nonce. Each response has ``text`` and an
    optional ``logprobs`` map for the first generated token.
    """

    is_live = False

    def __init__(self, rules: Sequence[MockRule], strict: bool = True, default: Mapping | None = None):
        self.rules = tuple(rules)
        self.strict = strict
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MockModel":
        rules = []
        for i, r in enumerate(doc.get("rules", ())):
            replies = r.get("replies") or ([r["reply"]] if "reply" in r else None)
            if not replies:
                raise ParseError(f"mock rule {i} has no reply")
            if not any(k in r for k in ("hash", "regex", "conversation_regex")):
                raise ParseError(f"mock rule {i} has no matcher")
            replies = tuple({"text": x} if isinstance(x, str) else x for x in replies)
            rules.append(MockRule(r.get("hash"), r.get("regex"), r.get("conversation_regex"), replies))
        default = doc.get("default")
        if isinstance(default, str):
            default = {"text": default}
        return cls(rules, bool(doc.get("strict", True)), default)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        spec = next((r.reply(request) for r in self.rules if r.matches(request)), None)
        if spec is None:
            if self.strict:
                raise FixtureMiss(f"no mock rule matches: {request.turns[-1][1][:120]!r}")
            spec = self.default or {"text": ""}
        table = spec.get("logprobs")
        text = spec.get("text")
        lps = _logprob_tokens(text or "", table) if table else None
        if text is None:
            text = lps[0].token if lps else ""
        if request.want_logprobs and lps is None:
            raise ProviderRefusedLogprobs("mock reply has no logprobs")
        return ChatResponse(str(text), lps, "stop", {"mock": True})


def script_mock(fixture_path: str | Path, strict: bool | None = None) -> MockModel:
    path = Path(fixture_path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from exc
    model = MockModel.from_dict(doc)
    if strict is not None:
        model.strict = strict
    return model


# ---------------------------------------------------------------- cache & gateway


class ResponseCache:
    """Append-only JSONL cache of ``{key, request, response}`` records."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        # a torn final line from an interrupted run is dropped
                        continue
                    self._entries[rec["key"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> ChatResponse | None:
        with self._lock:
            doc = self._entries.get(key)
        return None if doc is None else ChatResponse.from_dict(doc, cache_hit=True)

    def put(self, request: ChatRequest, response: ChatResponse) -> None:
        key = request.cache_key()
        doc = response.to_dict()
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = doc
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                line = json.dumps({"key": key, "request": request.canonical(), "response": doc}, ensure_ascii=False)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")


class TokenBucket:
    """Classic token bucket: ``rate`` tokens per second, at most ``capacity``."""

    def __init__(self, rate: float, capacity: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate, self.capacity = rate, capacity
        self.clock, self.sleep = clock, sleep
        self.tokens = capacity
        self.stamp = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


class Gateway:
    """Cache-first access to a backend with bounded concurrency."""

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        concurrency: int = 4,
        rate_limit: float | None = None,
    ):
        self.backend = backend
        self.cache = cache if cache is not None else ResponseCache()
        self._slots = threading.BoundedSemaphore(max(1, concurrency))
        self._bucket = TokenBucket(rate_limit, capacity=max(1.0, rate_limit)) if rate_limit else None
        self.backend_calls = 0
        self._count_lock = threading.Lock()
        self._inflight: dict[str, threading.Lock] = {}

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = request.cache_key()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        # one backend call per key even when identical requests race
        with self._count_lock:
            key_lock = self._inflight.setdefault(key, threading.Lock())
        with key_lock:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
            with self._slots:
                if self._bucket is not None:
                    self._bucket.acquire()
                with self._count_lock:
                    self.backend_calls += 1
                response = self.backend.complete(request)
            self.cache.put(request, response)
        with self._count_lock:
            self._inflight.pop(key, None)
        return replace(response, cache_hit=False)


# ---------------------------------------------------------------- answers

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = str.maketrans({c: " " for c in string.punctuation + "‘’“”"})


def normalize(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    words = text.lower().translate(_PUNCT).split()
    return " ".join(w for w in words if w not in _ARTICLES)


def match_option(text: str, options: Sequence[str]) -> int | None:
    """Index of the option the text names, or None.

    An exact match after normalization wins; otherwise the option must be
    the only one appearing in the text as a whole-word phrase (options
    contained in another matched option are ignored).
    """
    norm = normalize(text)
    opts = [normalize(o) for o in options]
    for i, o in enumerate(opts):
        if o and norm == o:
            return i
    padded = f" {norm} "
    hits = [i for i, o in enumerate(opts) if o and f" {o} " in padded]
    # "person" inside "person x" is not a separate mention
    hits = [i for i in hits if not any(opts[i] != opts[j] and f" {opts[i]} " in f" {opts[j]} " for j in hits)]
    if len({opts[i] for i in hits}) == 1:
        return hits[0]
    return None


@dataclass(frozen=True)
class ExtractedAnswer:
    value: str
    index: int | None
    raw_final: str
    rounds_used: int
    attempts: int
    cache_hits: int = 0
    transcript: tuple[Mapping[str, object], ...] = ()

    @property
    def refused(self) -> bool:
        return self.value == REFUSAL

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "index": self.index,
            "raw_final": self.raw_final,
            "rounds_used": self.rounds_used,
            "attempts": self.attempts,
        }


def iterative_answer(
    gateway: Gateway,
    model: str,
    turns: Sequence[tuple[str, str]],
    options: Sequence[str],
    specials: Mapping[int, str] | None = None,
    max_tokens: int = 512,
    max_attempts: int = MAX_ATTEMPTS,
) -> ExtractedAnswer:
    """Ask, and if the reply names no option, ask for a one- or two-word summary.

    The two-round exchange is retried up to ``max_attempts`` times in total
    (each attempt carries its number as the request nonce); if no round
    ever matches, the value is ``"refusal"``. ``specials`` renames matched
    options (e.g. the unknown option) to special values.
    """
    if not options:
        raise ValueError("options must not be empty")
    specials = dict(specials or {})
    summarize = templates()["summarize"]
    transcript: list[dict] = []
    hits = 0
    text = ""
    for attempt in range(max_attempts):
        convo = tuple(turns)
        for rnd in (1, 2):
            if rnd == 2:
                convo = convo + (("assistant", text), ("user", summarize))
            req = ChatRequest(model, convo, max_tokens=max_tokens, nonce=attempt)
            resp = gateway.complete(req)
            hits += resp.cache_hit
            text = resp.text
            transcript.append({"attempt": attempt + 1, "round": rnd, "turns": [list(t) for t in convo], "reply": text})
            idx = match_option(text, options)
            if idx is not None:
                value = specials.get(idx, options[idx])
                return ExtractedAnswer(value, idx, text, rnd, attempt + 1, hits, tuple(transcript))
    return ExtractedAnswer(REFUSAL, None, text, 2, max_attempts, hits, tuple(transcript))


def _family(token: str) -> str:
    return token.strip().lower()


def yes_probability(
    response: ChatResponse,
    renormalize: bool = False,
    yes_family: Sequence[str] = YES_FAMILY,
    no_family: Sequence[str] = NO_FAMILY,
) -> float:
    """Probability of a Yes-family token at the first content-token position.

    Tokens are compared after stripping whitespace and lowercasing, so
    ``"Yes"``, ``" Yes"`` and ``"yes"`` all count. Among several Yes-family
    candidates the most probable is used. With ``renormalize`` the value is
    ``p(yes) / (p(yes) + p(no))``.
    """
    if not response.token_logprobs:
        raise LogprobsMissing("response carries no token logprobs")
    first = next((t for t in response.token_logprobs if t.token.strip()), None)
    if first is None:
        raise LogprobsMissing("response has no content token")
    candidates = [(first.token, first.logprob), *first.alternatives]
    yes = {_family(t) for t in yes_family}
    no = {_family(t) for t in no_family}
    yes_lp = [lp for tok, lp in candidates if _family(tok) in yes]
    if not yes_lp:
        raise YesTokenAbsent(f"no Yes-family token among {[c[0] for c in candidates]}")
    p_yes = min(1.0, math.exp(max(yes_lp)))
    if not renormalize:
        return p_yes
    no_lp = [lp for tok, lp in candidates if _family(tok) in no]
    p_no = math.exp(max(no_lp)) if no_lp else 0.0
    return p_yes / (p_yes + p_no)
