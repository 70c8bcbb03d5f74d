"""Benchmark loaders: WinoBias, BBQ (disambiguous) and the Discrim-Eval grid.

Every loader emits immutable :class:`BenchmarkInstance` objects. The
canonical interchange format is JSONL, one record per line; the record
schemas are documented in ``docs/data_formats.md``.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    ExclusionError,
    MarkerNotFound,
    ParseError,
    PronounUnresolved,
    SlotMissing,
    UnknownCategory,
    ValidationError,
)
from .resources import lexicons, tokens

BENCHMARKS = ("winobias", "bbq", "discrim_eval")
POLARITIES = ("pro", "anti", "n/a")
TASK_TYPES = ("type1", "type2", "n/a")
CATEGORIES = (
    "age",
    "disability",
    "gender",
    "nationality",
    "physical_appearance",
    "race",
    "religion",
    "ses",
    "sexual_orientation",
)
EXCLUSION_REASONS = ("ambiguous_human_eval", "refusal", "base_scenario_refused")

PRONOUNS = ("he", "she", "him", "her", "his", "hers")
POSSESSIVE_ONLY = ("his",)

# native BBQ category names -> category enum
BBQ_CATEGORIES = {
    "age": "age",
    "disability_status": "disability",
    "gender_identity": "gender",
    "nationality": "nationality",
    "physical_appearance": "physical_appearance",
    "race_ethnicity": "race",
    "religion": "religion",
    "ses": "ses",
    "sexual_orientation": "sexual_orientation",
}

AGES = tuple(range(20, 101, 10))
GENDERS = ("male", "female", "non-binary")
RACES = ("white", "Black", "Asian", "Hispanic", "Native American")
DEMOGRAPHIC_SLOTS = ("AGE", "GENDER", "RACE")
PRONOUN_FORMS = {
    "male": {"PRONOUN": "he", "PRONOUN_OBJ": "him", "PRONOUN_POSS": "his"},
    "female": {"PRONOUN": "she", "PRONOUN_OBJ": "her", "PRONOUN_POSS": "her"},
    "non-binary": {"PRONOUN": "they", "PRONOUN_OBJ": "them", "PRONOUN_POSS": "their"},
}


@dataclass(frozen=True)
class MarkerSpan:
    offset: int
    length: int
    kind: str

    def text(self, source: str) -> str:
        return source[self.offset : self.offset + self.length]


@dataclass(frozen=True)
class BenchmarkInstance:
    """One evaluable item with its gold answer and social-marker annotations.

    ``entities`` holds the entity noun phrases (WinoBias occupations, BBQ
    entity mentions per answer) and ``group`` the pairing key: the
    pro/anti partner key for WinoBias, the template id for Discrim-Eval.
    """

    id: str
    benchmark: str
    text: str
    options: tuple[str, ...]
    gold: int | None
    polarity: str = "n/a"
    task_type: str = "n/a"
    social_category: str | None = None
    marker_spans: tuple[MarkerSpan, ...] = ()
    demographics: Mapping[str, object] | None = None
    excluded: bool = False
    exclusion_reason: str | None = None
    question: str | None = None
    entities: tuple[tuple[str, ...], ...] = ()
    unknown_index: int | None = None
    pronoun: str | None = None
    pronoun_case: str | None = None
    group: str | None = None
    base_text: str | None = None
    base_override: Mapping[str, object] | None = None
    descriptors: tuple[str, ...] = ()

    def spans(self, kind: str) -> list[MarkerSpan]:
        return [s for s in self.marker_spans if s.kind == kind]

    @property
    def pronoun_span(self) -> MarkerSpan | None:
        found = self.spans("pronoun")
        return found[0] if found else None


@dataclass(frozen=True)
class ExclusionEntry:
    id: str
    reason: str


@dataclass(frozen=True)
class ExclusionList:
    entries: tuple[ExclusionEntry, ...] = ()

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.reason not in EXCLUSION_REASONS:
                raise ExclusionError(f"unknown exclusion reason {e.reason!r} for {e.id}")
            if e.id in seen:
                raise ExclusionError(f"duplicate exclusion id {e.id}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ExclusionEntry]:
        return iter(self.entries)

    @property
    def ids(self) -> frozenset[str]:
        return frozenset(e.id for e in self.entries)

    def reason_for(self, id_: str) -> str | None:
        for e in self.entries:
            if e.id == id_:
                return e.reason
        return None

    def merged(self, other: "ExclusionList") -> "ExclusionList":
        return ExclusionList(self.entries + other.entries)

    def resolve(self, known_ids: Iterable[str]) -> None:
        unknown = sorted(self.ids - set(known_ids))
        if unknown:
            shown = ", ".join(unknown[:5]) + (" ..." if len(unknown) > 5 else "")
            raise ExclusionError(f"{len(unknown)} exclusion ids do not resolve: {shown}")

    def to_json(self) -> str:
        return json.dumps([{"id": e.id, "reason": e.reason} for e in self.entries], indent=2)


def load_exclusions(path: str | Path) -> ExclusionList:
    """Read an exclusion list: a JSON array of ``{"id", "reason"}`` objects."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from exc
    if not isinstance(doc, list):
        raise ParseError("exclusion list must be a JSON array", path=path)
    entries = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "id" not in item or "reason" not in item:
            raise ParseError(f"entry {i} needs 'id' and 'reason'", path=path)
        entries.append(ExclusionEntry(str(item["id"]), str(item["reason"])))
    return ExclusionList(tuple(entries))


def apply_exclusions(
    instances: Sequence[BenchmarkInstance], exclusions: ExclusionList | None, by: str = "id"
) -> list[BenchmarkInstance]:
    """Flag excluded instances; the result has the same length and order.

    ``by="group"`` matches exclusion ids against ``instance.group`` (used
    for Discrim-Eval, where one refused base scenario excludes all its cells).
    """
    if not exclusions:
        return list(instances)
    reasons = {e.id: e.reason for e in exclusions}
    out = []
    for inst in instances:
        reason = reasons.get(inst.id if by == "id" else inst.group)
        out.append(replace(inst, excluded=True, exclusion_reason=reason) if reason else inst)
    return out


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno, path=path) from exc
            if not isinstance(rec, dict):
                raise ParseError("record must be a JSON object", line=lineno, path=path)
            yield lineno, rec


def _require(rec: dict, keys: Sequence[str], lineno: int, path: Path) -> None:
    missing = [k for k in keys if k not in rec]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(missing)}", line=lineno, path=path)


def _as_paths(paths) -> list[Path]:
    if isinstance(paths, (str, Path)):
        return [Path(paths)]
    return [Path(p) for p in paths]


def _find_phrase(text: str, phrase: str, start: int = 0) -> int:
    m = re.compile(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)", re.IGNORECASE).search(text, start)
    return m.start() if m else -1


# ---------------------------------------------------------------- WinoBias

WINOBIAS_KEYS = ("id", "sentence", "entities", "pronoun", "gold", "polarity", "task_type")
WINOBIAS_OPTIONAL = ("pronoun_offset", "pronoun_case", "base_override")

# words after which "her" is an object pronoun rather than a determiner
_OBJECT_FOLLOWERS = frozenset(
    "to a an the that and because about for with in on at as but so if when after before since than "
    "from up out back again into of or by while once until how what why where this these those all "
    "anything something nothing how".split()
)


def pronoun_case(sentence: str, offset: int, pronoun: str) -> str:
    """``"possessive"`` or ``"personal"`` for the pronoun at ``offset``."""
    p = pronoun.lower()
    if p in POSSESSIVE_ONLY:
        return "possessive"
    if p != "her":
        return "personal"
    rest = sentence[offset + len(pronoun) :]
    m = re.match(r"\s+([A-Za-z']+)", rest)
    if not m or m.group(1).lower() in _OBJECT_FOLLOWERS:
        return "personal"
    return "possessive"


def _winobias_spans(sentence: str, entities: Sequence[str], pronoun: str, offset: int | None):
    p = pronoun.lower()
    if p not in PRONOUNS:
        raise MarkerNotFound(f"{pronoun!r} is not a recognized gendered pronoun")
    if offset is None:
        offset = _find_phrase(sentence, pronoun)
        if offset < 0:
            raise MarkerNotFound(f"pronoun {pronoun!r} not found in sentence")
    elif sentence[offset : offset + len(pronoun)].lower() != p:
        raise MarkerNotFound(f"pronoun_offset {offset} does not point at {pronoun!r}")
    spans = [MarkerSpan(offset, len(pronoun), "pronoun")]
    for i, ent in enumerate(entities):
        pos = _find_phrase(sentence, ent)
        if pos < 0:
            raise MarkerNotFound(f"entity {ent!r} not found in sentence")
        spans.append(MarkerSpan(pos, len(ent), f"entity{i}"))
    return tuple(spans)


def winobias_pair_key(sentence: str, pronoun_span: MarkerSpan, task_type: str, gold: int) -> str:
    blanked = sentence[: pronoun_span.offset] + "_" + sentence[pronoun_span.offset + pronoun_span.length :]
    return f"{task_type}|{gold}|{blanked.lower()}"


def winobias_from_record(rec: dict, lineno: int | None = None, path: Path | None = None) -> BenchmarkInstance:
    """Validate one canonical WinoBias record and locate its markers."""
    entities = rec["entities"]
    if not isinstance(entities, list) or len(entities) != 2:
        raise ValidationError("WinoBias needs exactly 2 entities", line=lineno, path=path)
    if rec["polarity"] not in ("pro", "anti"):
        raise ValidationError(f"polarity must be pro or anti, got {rec['polarity']!r}", line=lineno, path=path)
    if rec["task_type"] not in ("type1", "type2"):
        raise ValidationError(f"task_type must be type1 or type2, got {rec['task_type']!r}", line=lineno, path=path)
    gold = rec["gold"]
    if gold not in (0, 1):
        raise ValidationError("gold must be 0 or 1", line=lineno, path=path)
    sentence = rec["sentence"]
    try:
        spans = _winobias_spans(sentence, entities, rec["pronoun"], rec.get("pronoun_offset"))
    except MarkerNotFound as exc:
        where = f"{path}:{lineno}: " if lineno is not None else ""
        raise MarkerNotFound(f"{where}{rec['id']}: {exc}") from None
    pspan = spans[0]
    case = rec.get("pronoun_case") or pronoun_case(sentence, pspan.offset, rec["pronoun"])
    if case not in ("personal", "possessive"):
        raise ValidationError(f"pronoun_case must be personal or possessive, got {case!r}", line=lineno, path=path)
    return BenchmarkInstance(
        id=str(rec["id"]),
        benchmark="winobias",
        text=sentence,
        options=tuple(entities),
        gold=gold,
        polarity=rec["polarity"],
        task_type=rec["task_type"],
        social_category="gender",
        marker_spans=spans,
        question=None,
        entities=tuple((e,) for e in entities),
        pronoun=sentence[pspan.offset : pspan.offset + pspan.length],
        pronoun_case=case,
        group=winobias_pair_key(sentence, pspan, rec["task_type"], gold),
        base_override=rec.get("base_override"),
    )


def load_winobias(
    paths,
    task_type: str | None = None,
    polarity: str | None = None,
    exclusions: ExclusionList | None = None,
) -> list[BenchmarkInstance]:
    """Load canonical WinoBias JSONL from one or more files.

    ``task_type`` and ``polarity`` filter the emitted instances. Exclusion
    ids must resolve against every parsed record (before filtering);
    excluded instances are flagged, not dropped.
    """
    instances: list[BenchmarkInstance] = []
    seen: set[str] = set()
    for path in _as_paths(paths):
        for lineno, rec in _iter_jsonl(path):
            _require(rec, WINOBIAS_KEYS, lineno, path)
            inst = winobias_from_record(rec, lineno, path)
            if inst.id in seen:
                raise ValidationError(f"duplicate id {inst.id}", line=lineno, path=path)
            seen.add(inst.id)
            instances.append(inst)
    if exclusions is not None:
        exclusions.resolve(seen)
        instances = apply_exclusions(instances, exclusions)
    return [
        i
        for i in instances
        if (task_type is None or i.task_type == task_type) and (polarity is None or i.polarity == polarity)
    ]


def winobias_to_record(inst: BenchmarkInstance) -> dict:
    rec = {
        "id": inst.id,
        "sentence": inst.text,
        "entities": list(inst.options),
        "pronoun": inst.pronoun,
        "gold": inst.gold,
        "polarity": inst.polarity,
        "task_type": inst.task_type,
    }
    pspan = inst.pronoun_span
    if pspan is not None and pspan.offset != _find_phrase(inst.text, inst.pronoun):
        rec["pronoun_offset"] = pspan.offset
    if inst.pronoun_case != pronoun_case(inst.text, pspan.offset, inst.pronoun):
        rec["pronoun_case"] = inst.pronoun_case
    if inst.base_override is not None:
        rec["base_override"] = dict(inst.base_override)
    return rec


def canonical_winobias(rec: dict) -> dict:
    """Projection of a raw record onto the canonical schema, defaults dropped."""
    out = {k: rec[k] for k in WINOBIAS_KEYS}
    out["id"] = str(out["id"])
    out["entities"] = list(out["entities"])
    for k in WINOBIAS_OPTIONAL:
        if k in rec:
            out[k] = rec[k]
    if "pronoun_offset" in out and out["pronoun_offset"] == _find_phrase(rec["sentence"], rec["pronoun"]):
        del out["pronoun_offset"]
    if "pronoun_case" in out:
        off = rec.get("pronoun_offset", _find_phrase(rec["sentence"], rec["pronoun"]))
        if out["pronoun_case"] == pronoun_case(rec["sentence"], off, rec["pronoun"]):
            del out["pronoun_case"]
    return out


_BRACKET = re.compile(r"\[([^\]]+)\]")


def parse_native_winobias(line: str, polarity: str, task_type: str, id_: str) -> dict:
    """Convert one bracket-annotated native WinoBias line to a canonical record.

    Native lines look like ``"1 [The developer] argued with the designer
    because [she] did not like the design."``: the gold entity and the
    pronoun are bracketed; the other entity is found via the occupation
    list.
    """
    body = re.sub(r"^\s*\d+\s+", "", line.strip())
    marks = _BRACKET.findall(body)
    pron = [m for m in marks if m.lower() in PRONOUNS]
    ents = [m for m in marks if m.lower() not in PRONOUNS]
    if len(pron) != 1 or len(ents) != 1:
        raise ParseError(f"expected one bracketed entity and one pronoun: {line.strip()!r}")
    sentence = _BRACKET.sub(lambda m: m.group(1), body)
    gold_np = ents[0]
    gold_pos = _find_phrase(sentence, gold_np)
    occupations = lexicons()["winobias_occupations"]
    found = []
    for occ in occupations:
        for m in re.finditer(r"\b(?:the|a|an)\s+" + re.escape(occ) + r"\b", sentence, re.IGNORECASE):
            if m.start() != gold_pos:
                found.append((m.start(), m.group(0)))
    gold_word = gold_np.lower().split()[-1]
    found = [f for f in found if f[1].lower().split()[-1] != gold_word]
    if not found:
        raise ParseError(f"second occupation not found: {sentence!r}")
    other_pos, other_np = min(found)
    pairs = sorted([(gold_pos, gold_np, True), (other_pos, other_np, False)])
    entities = [_lower_article(np_) for _, np_, _ in pairs]
    gold = next(i for i, p in enumerate(pairs) if p[2])
    return {
        "id": id_,
        "sentence": sentence,
        "entities": entities,
        "pronoun": pron[0],
        "gold": gold,
        "polarity": polarity,
        "task_type": task_type,
    }


def _lower_article(np_: str) -> str:
    head, _, rest = np_.partition(" ")
    return f"{head.lower()} {rest}" if head.lower() in ("the", "a", "an") and rest else np_


def pair_instances(instances: Sequence[BenchmarkInstance]) -> tuple[dict[str, str], list[str]]:
    """Match pro/anti WinoBias partners that differ only in the pronoun.

    Returns ``(pairs, unpaired)``; ``pairs`` maps each id to its partner in
    both directions.
    """
    buckets: dict[str, dict[str, list[str]]] = {}
    for inst in instances:
        buckets.setdefault(inst.group, {}).setdefault(inst.polarity, []).append(inst.id)
    pairs: dict[str, str] = {}
    unpaired: list[str] = []
    for bucket in buckets.values():
        pro, anti = bucket.get("pro", []), bucket.get("anti", [])
        for a, b in zip(pro, anti):
            pairs[a], pairs[b] = b, a
        unpaired += pro[len(anti) :] + anti[len(pro) :]
    return pairs, sorted(unpaired)


# ---------------------------------------------------------------- BBQ

BBQ_KEYS = ("category", "context_condition", "context", "question", "ans0", "ans1", "ans2", "label")


def bbq_category(name: str) -> str:
    key = name.strip().lower().replace(" ", "_")
    if key in BBQ_CATEGORIES:
        return BBQ_CATEGORIES[key]
    if key in CATEGORIES:
        return key
    raise UnknownCategory(f"unrecognized BBQ category {name!r}")


def _unknown_index(rec: dict, answers: Sequence[str]) -> int | None:
    if "unknown_index" in rec:
        return int(rec["unknown_index"])
    info = rec.get("answer_info")
    if isinstance(info, dict):
        tagged = [i for i in range(3) if str((info.get(f"ans{i}") or ["", ""])[-1]).lower() == "unknown"]
        if len(tagged) == 1:
            return tagged[0]
    phrases = {p.lower() for p in lexicons()["bbq_unknown_answers"]}
    hits = [i for i, a in enumerate(answers) if a.strip().rstrip(".").lower() in phrases]
    return hits[0] if len(hits) == 1 else None


def _strip_article(np_: str) -> str:
    head, _, rest = np_.strip().partition(" ")
    return rest if head.lower() in ("the", "a", "an") and rest else np_.strip()


def _auto_mentions(context: str, answer: str) -> list[str]:
    core = _strip_article(answer)
    pat = re.compile(r"(?<!\w)(?:(?:the|a|an)\s+)?" + re.escape(core) + r"(?!\w)", re.IGNORECASE)
    return list(dict.fromkeys(m.group(0) for m in pat.finditer(context)))


def _mention_spans(text: str, mentions: Sequence[str], kind: str) -> list[MarkerSpan]:
    spans = []
    for m in mentions:
        for hit in re.finditer(r"(?<!\w)" + re.escape(m) + r"(?!\w)", text, re.IGNORECASE):
            spans.append(MarkerSpan(hit.start(), hit.end() - hit.start(), kind))
    return spans


def bbq_from_record(rec: dict, lineno: int | None = None, path: Path | None = None) -> BenchmarkInstance:
    category = bbq_category(str(rec["category"]))
    answers = tuple(str(rec[f"ans{i}"]) for i in range(3))
    unknown = _unknown_index(rec, answers)
    if unknown is None or not 0 <= unknown < 3:
        raise ValidationError("cannot identify exactly one unknown option", line=lineno, path=path)
    label = int(rec["label"])
    if label not in (0, 1, 2):
        raise ValidationError(f"label {label} out of range", line=lineno, path=path)
    if label == unknown:
        raise ValidationError("disambiguous item has the unknown option as gold", line=lineno, path=path)
    rid = str(rec["id"]) if "id" in rec else f"{category}-{rec.get('example_id', lineno)}"
    context = str(rec["context"])
    entity_idx = [i for i in range(3) if i != unknown]
    annotated = rec.get("entities")
    if annotated is not None:
        mentions = {int(e["answer_index"]): tuple(e.get("mentions", ())) for e in annotated}
        if set(mentions) != set(entity_idx):
            raise ValidationError("entities must annotate both non-unknown answers", line=lineno, path=path)
    else:
        mentions = {i: tuple(_auto_mentions(context, answers[i])) for i in entity_idx}
    descriptors = tuple(rec.get("descriptors", ()))
    spans: list[MarkerSpan] = []
    for n, i in enumerate(entity_idx):
        spans += _mention_spans(context, mentions[i], f"entity{n}")
    spans += _mention_spans(context, descriptors, "descriptor")
    spans.sort(key=lambda s: (s.offset, -s.length))
    return BenchmarkInstance(
        id=rid,
        benchmark="bbq",
        text=context,
        options=answers,
        gold=label,
        social_category=category,
        marker_spans=tuple(spans),
        question=str(rec["question"]),
        entities=tuple(mentions[i] for i in entity_idx),
        unknown_index=unknown,
        group=rec.get("question_polarity"),
        base_override=rec.get("base_override"),
        descriptors=descriptors,
    )


def load_bbq(
    paths, setting: str = "disambiguous", exclusions: ExclusionList | None = None
) -> list[BenchmarkInstance]:
    """Load BBQ JSONL (native or canonical records); disambiguous items only."""
    if setting not in ("disambiguous", "disambig"):
        raise ValueError("only the disambiguous setting is supported")
    instances: list[BenchmarkInstance] = []
    seen: set[str] = set()
    for path in _as_paths(paths):
        for lineno, rec in _iter_jsonl(path):
            _require(rec, BBQ_KEYS, lineno, path)
            if str(rec["context_condition"]).lower() not in ("disambig", "disambiguous"):
                continue
            inst = bbq_from_record(rec, lineno, path)
            if inst.id in seen:
                raise ValidationError(f"duplicate id {inst.id}", line=lineno, path=path)
            seen.add(inst.id)
            instances.append(inst)
    if exclusions is not None:
        exclusions.resolve(seen)
        instances = apply_exclusions(instances, exclusions)
    return instances


def bbq_to_record(inst: BenchmarkInstance) -> dict:
    rec = {
        "id": inst.id,
        "category": inst.social_category,
        "context_condition": "disambig",
        "context": inst.text,
        "question": inst.question,
        **{f"ans{i}": a for i, a in enumerate(inst.options)},
        "label": inst.gold,
        "unknown_index": inst.unknown_index,
    }
    if inst.group is not None:
        rec["question_polarity"] = inst.group
    entity_idx = [i for i in range(3) if i != inst.unknown_index]
    rec["entities"] = [{"answer_index": i, "mentions": list(inst.entities[n])} for n, i in enumerate(entity_idx)]
    if inst.descriptors:
        rec["descriptors"] = list(inst.descriptors)
    if inst.base_override is not None:
        rec["base_override"] = dict(inst.base_override)
    return rec


def canonical_bbq(rec: dict) -> dict:
    """Canonical form of a disambiguous BBQ record, inferred fields made explicit."""
    return bbq_to_record(bbq_from_record(rec))


def category_histogram(instances: Iterable[BenchmarkInstance]) -> dict[str, int]:
    return dict(sorted(Counter(i.social_category for i in instances).items()))


# ---------------------------------------------------------------- Discrim-Eval


@dataclass(frozen=True)
class DiscrimTemplate:
    """A decision scenario with ``[AGE]``, ``[GENDER]``, ``[RACE]`` slots.

    Pronoun slots ``[PRONOUN]``, ``[PRONOUN_OBJ]`` and ``[PRONOUN_POSS]``
    follow the filled gender; in the base scenario they become ``subject``.
    """

    id: str
    text: str
    subject: str | None = None
    base_text: str | None = None

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": self.text}
        if self.subject is not None:
            rec["subject"] = self.subject
        if self.base_text is not None:
            rec["base_text"] = self.base_text
        return rec


_SLOT = re.compile(r"(?:(?<![\w])([Aa]n?)\s+)?\[(AGE|GENDER|RACE|PRONOUN_OBJ|PRONOUN_POSS|PRONOUN)\]")


def load_discrim_templates(path: str | Path) -> list[DiscrimTemplate]:
    """Templates from a JSONL file, or a JSON array of the same objects."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            records = list(enumerate(json.loads(path.read_text(encoding="utf-8")), start=1))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno, path=path) from exc
    else:
        records = list(_iter_jsonl(path))
    out = []
    for lineno, rec in records:
        _require(rec, ("id", "text"), lineno, path)
        out.append(DiscrimTemplate(str(rec["id"]), rec["text"], rec.get("subject"), rec.get("base_text")))
    return out


def _article_for(word: str) -> str:
    w = word.lower()
    if w[:1] in "aeiou" or re.match(r"(8|11\b|11-|18\b|18-)", w):
        return "an"
    return "a"


def _at_sentence_start(text: str, pos: int) -> bool:
    before = text[:pos].rstrip()
    return not before or before[-1] in ".!?\n"


def _cap(word: str) -> str:
    return word[:1].upper() + word[1:]


def fill_template(template: DiscrimTemplate, age: int, gender: str, race: str) -> tuple[str, tuple[MarkerSpan, ...]]:
    """Fill every slot; returns the text and spans of the inserted values."""
    values = {"AGE": str(age), "GENDER": gender, "RACE": race, **PRONOUN_FORMS[gender]}
    kinds = {"AGE": "age", "GENDER": "gender", "RACE": "race"}
    out: list[str] = []
    spans: list[MarkerSpan] = []
    pos = 0
    length = 0
    for m in _SLOT.finditer(template.text):
        chunk = template.text[pos : m.start()]
        out.append(chunk)
        length += len(chunk)
        value = values[m.group(2)]
        if m.group(1):
            art = _article_for(value)
            art = _cap(art) if m.group(1)[0].isupper() else art
            piece = art + " "
            out.append(piece)
            length += len(piece)
        elif _at_sentence_start("".join(out), length) and m.group(2).startswith("PRONOUN"):
            value = _cap(value)
        spans.append(MarkerSpan(length, len(value), kinds.get(m.group(2), "pronoun")))
        out.append(value)
        length += len(value)
        pos = m.end()
    out.append(template.text[pos:])
    return "".join(out), tuple(spans)


_GENDERED_PRONOUNS = frozenset({"he", "she", "him", "her", "his", "hers", "himself", "herself"})


def base_scenario_text(template: DiscrimTemplate) -> str:
    """Scenario with demographic slots removed and pronouns replaced by the subject."""
    if template.base_text is not None:
        text = template.base_text
    else:
        text = _strip_slots(template)
    leftovers = [t for t in tokens(text) if t in _GENDERED_PRONOUNS]
    if leftovers:
        raise PronounUnresolved(f"{template.id}: gendered pronoun(s) {leftovers} survive in the base scenario")
    if "[" in text and re.search(r"\[[A-Z_]+\]", text):
        raise SlotMissing(f"{template.id}: unrecognized slot left in base scenario")
    return text


def _strip_slots(template: DiscrimTemplate) -> str:
    text = template.text
    has_pronoun_slot = re.search(r"\[PRONOUN(?:_OBJ|_POSS)?\]", text) is not None
    if has_pronoun_slot and not template.subject:
        raise PronounUnresolved(f"{template.id}: pronoun slots need a subject noun phrase")
    subject = template.subject or ""
    marker = "\x00"
    text = re.sub(r"\[AGE\](?:-year-old)?|\[GENDER\]|\[RACE\]", marker, text)

    def pronoun(m: re.Match) -> str:
        val = subject + "'s" if m.group(1) == "_POSS" else subject
        return _cap(val) if _at_sentence_start(text, m.start()) else val

    text = re.sub(r"\[PRONOUN(_OBJ|_POSS)?\]", pronoun, text)

    def article(m: re.Match) -> str:
        art = _article_for(m.group(3))
        return (_cap(art) if m.group(1)[0].isupper() else art) + " " + m.group(3)

    text = re.sub(r"\b([Aa]n?)((?:\s*\x00)+)\s+(\w)", article, text)
    text = text.replace(marker, "")
    text = re.sub(r"[ \t]{2,}", " ", text)
    text = re.sub(r" ([,.;:!?])", r"\1", text)
    return "\n".join(line.strip() for line in text.split("\n"))


def _check_template(template: DiscrimTemplate) -> None:
    missing = [s for s in DEMOGRAPHIC_SLOTS if f"[{s}]" not in template.text]
    if missing:
        raise SlotMissing(f"{template.id}: missing slot(s) {', '.join(missing)}")


def expand_discrim_eval(
    templates: Sequence[DiscrimTemplate],
) -> tuple[list[BenchmarkInstance], dict[str, BenchmarkInstance]]:
    """Cross every template with 9 ages x 3 genders x 5 races.

    Returns the grid instances and one base scenario per template id. The
    base scenario is itself a (demographic-free) instance whose id is
    ``"<template>|base"``.
    """
    ids = [t.id for t in templates]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate template ids")
    instances: list[BenchmarkInstance] = []
    bases: dict[str, BenchmarkInstance] = {}
    for t in templates:
        _check_template(t)
        base = base_scenario_text(t)
        bases[t.id] = BenchmarkInstance(
            id=f"{t.id}|base",
            benchmark="discrim_eval",
            text=base,
            options=("yes", "no"),
            gold=None,
            group=t.id,
            base_text=base,
        )
        for age in AGES:
            for gender in GENDERS:
                for race in RACES:
                    text, spans = fill_template(t, age, gender, race)
                    instances.append(
                        BenchmarkInstance(
                            id=f"{t.id}|age={age}|gender={gender}|race={race}",
                            benchmark="discrim_eval",
                            text=text,
                            options=("yes", "no"),
                            gold=None,
                            marker_spans=spans,
                            demographics={"age": age, "gender": gender, "race": race},
                            group=t.id,
                            base_text=base,
                        )
                    )
    return instances, bases


def is_yes(answer: str | None) -> bool:
    if answer is None:
        return False
    words = tokens(answer)
    return bool(words) and words[0] == "yes"


def filter_base_refusals(
    base_answers: Mapping[str, str | None], expected: Iterable[str] | None = None
) -> ExclusionList:
    """Exclude scenarios whose base answer is a refusal or not a Yes.

    ``base_answers`` maps template id to the extracted answer (``None`` or
    ``"refusal"`` for refusals). ``expected`` lists the loaded template ids;
    the map must cover exactly those.
    """
    if expected is not None:
        expected = set(expected)
        if set(base_answers) != expected:
            raise ExclusionError(
                f"base answers cover {len(base_answers)} scenarios, expected {len(expected)}"
            )
    if not base_answers:
        raise ExclusionError("no base answers to filter")
    entries = [
        ExclusionEntry(tid, "base_scenario_refused")
        for tid in sorted(base_answers)
        if not is_yes(base_answers[tid])
    ]
    return ExclusionList(tuple(entries))


# ---------------------------------------------------------------- generic


def dump_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def to_record(inst: BenchmarkInstance) -> dict:
    if inst.benchmark == "winobias":
        return winobias_to_record(inst)
    if inst.benchmark == "bbq":
        return bbq_to_record(inst)
    raise ValueError("Discrim-Eval cells are generated, serialize their templates instead")
