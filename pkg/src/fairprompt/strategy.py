"""Prompt strategies I/II/III, base-question derivation and two-stage plans.

Strategy I asks the model to consider a social-agnostic fact (the answer
to a base question with every social marker removed), II counteracts a
skewed prior with an explicit balance statement, and III tells the model
not to use the social category. Clauses always appear in the order
II, I, III, followed by the original question.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .bench import BenchmarkInstance, CATEGORIES, MarkerSpan
from .errors import IrreducibleInstance, MissingAnnotation, UnsupportedCategoryForTemplate
from .resources import MarkerSet, lexicons, marker_set, templates

STRATEGIES = ("I", "II", "III")
CLAUSE_ORDER = ("II", "I", "III")
BASELINES = ("default", "cot", "icl")
SLOT = "BASE_ANSWER"
PLACEHOLDER = re.compile(r"\{\{([A-Z_]+)\}\}")

# special values an extracted answer can take besides an option
EQUALLY_LIKELY = "equally_likely"
UNKNOWN_OPTION = "unknown_option"
REFUSAL = "refusal"

WINOBIAS_BASE_OPTIONS = ("Sentence 1", "Sentence 2", "Equally likely")

# first words that stay lowercase after a clause ending in a comma
_LOWERABLE = frozenset(
    "the a an who whom whose what which when where why how do does did is are was were in on at after "
    "before both two this that these those there it one my our your their please choose".split()
)


@dataclass(frozen=True)
class StrategySpec:
    """A combination of strategies plus their phrasing options.

    ``counteract_level`` is ``"balanced"`` (the either-gender phrasing) or
    an integer percentage; it may only be set when II is present.
    """

    strategy_set: frozenset[str]
    counteract_level: str | int | None = None
    social_category: str | None = None
    fact_phrasing: str = "default"
    balance_phrasing: str = "default"
    avoid_phrasing: str = "default"

    def __post_init__(self):
        s = frozenset(self.strategy_set)
        object.__setattr__(self, "strategy_set", s)
        if not s:
            raise ValueError("strategy_set must not be empty")
        unknown = s - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")
        level = self.counteract_level
        if level is not None:
            if "II" not in s:
                raise ValueError("counteract_level requires strategy II")
            if level != "balanced":
                if isinstance(level, bool) or not isinstance(level, int) or not 0 <= level <= 100:
                    raise ValueError("counteract_level must be 'balanced' or an integer in [0, 100]")
        if self.social_category is not None and self.social_category not in CATEGORIES:
            raise ValueError(f"unknown social category {self.social_category!r}")

    @property
    def level(self) -> str | int:
        return "balanced" if self.counteract_level is None else self.counteract_level

    @property
    def label(self) -> str:
        return "+".join(s for s in STRATEGIES if s in self.strategy_set)

    @classmethod
    def parse(cls, label: str, **kwargs) -> "StrategySpec":
        """``StrategySpec.parse("I+II", counteract_level=100)``."""
        return cls(frozenset(p.strip() for p in label.split("+") if p.strip()), **kwargs)


@dataclass(frozen=True)
class BaseQuestion:
    candidate_statements: tuple[str, ...]
    question_text: str
    kind: str  # likelihood_comparison | neutralized_qa | base_scenario
    options: tuple[str, ...] = ()
    gold: int | None = None
    # Person X / Person Y naming for neutralized QA: (label, first mention)
    aliases: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Turn:
    role: str  # system | user | assistant (injected)
    content: str
    stage: int = 1

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content, "stage": self.stage}


@dataclass(frozen=True)
class PromptPlan:
    """Ordered chat turns grouped into stages, possibly with open slots."""

    turns: tuple[Turn, ...]
    slots: frozenset[str] = frozenset()
    metadata: Mapping[str, object] = field(default_factory=dict)

    @property
    def n_stages(self) -> int:
        return max(t.stage for t in self.turns)

    def stage(self, k: int) -> tuple[Turn, ...]:
        return tuple(t for t in self.turns if t.stage == k)

    def messages(self, k: int) -> list[dict]:
        """Chat messages for stage ``k`` in ``{role, content}`` form."""
        turns = self.stage(k)
        unfilled = [n for t in turns for n in PLACEHOLDER.findall(t.content)]
        if unfilled:
            raise ValueError(f"stage {k} has unfilled slots {unfilled}")
        return [{"role": t.role, "content": t.content} for t in turns]

    def fill(self, **values: str) -> "PromptPlan":
        unknown = set(values) - self.slots
        if unknown:
            raise KeyError(f"plan has no slot(s) {sorted(unknown)}")

        def sub(text: str) -> str:
            return PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), text)

        turns = tuple(replace(t, content=sub(t.content)) for t in self.turns)
        return replace(self, turns=turns, slots=self.slots - set(values))

    @property
    def complete(self) -> bool:
        return not self.slots

    def to_dict(self) -> dict:
        return {
            "turns": [t.to_dict() for t in self.turns],
            "slots": sorted(self.slots),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)


# ---------------------------------------------------------------- markers


def marker_set_for(instance: BenchmarkInstance) -> MarkerSet:
    """Lexicon of social markers that must not survive neutralization."""
    gender = marker_set("gender")
    if instance.benchmark == "winobias":
        return gender
    if instance.benchmark == "bbq":
        return marker_set(instance.social_category).union(gender)
    return marker_set("demographic").union(gender)


def find_markers(text: str, markers: MarkerSet) -> list[str]:
    return markers.scan(text)


def base_question_markers(bq: BaseQuestion, instance: BenchmarkInstance) -> list[str]:
    markers = marker_set_for(instance)
    found = []
    for text in (*bq.candidate_statements, bq.question_text):
        found += markers.scan(text)
    return found


# ---------------------------------------------------------------- base questions


def _cap(text: str) -> str:
    return text[:1].upper() + text[1:]


def _at_sentence_start(text: str, pos: int) -> bool:
    before = text[:pos].rstrip()
    return not before or before[-1] in ".!?"


def _replace_pronoun(inst: BenchmarkInstance, entity: str) -> str:
    span = inst.pronoun_span
    sentence = inst.text
    value = entity + "'s" if inst.pronoun_case == "possessive" else entity
    if _at_sentence_start(sentence, span.offset):
        value = _cap(value)
    return sentence[: span.offset] + value + sentence[span.offset + span.length :]


def _winobias_base(inst: BenchmarkInstance) -> BaseQuestion:
    if inst.pronoun_span is None:
        raise MissingAnnotation(f"{inst.id}: no pronoun span")
    s1, s2 = (_replace_pronoun(inst, ent) for ent in inst.options)
    text = templates()["base_questions"]["winobias"].format(s1=s1, s2=s2)
    return BaseQuestion((s1, s2), text, "likelihood_comparison", WINOBIAS_BASE_OPTIONS, inst.gold)


def _select_spans(spans: Sequence[MarkerSpan]) -> list[MarkerSpan]:
    chosen: list[MarkerSpan] = []
    for s in sorted(spans, key=lambda s: (-s.length, s.offset)):
        if all(s.offset + s.length <= c.offset or c.offset + c.length <= s.offset for c in chosen):
            chosen.append(s)
    return sorted(chosen, key=lambda s: s.offset)


def _tidy(text: str) -> str:
    text = re.sub(r"[ \t]{2,}", " ", text)
    text = re.sub(r" ([,.;:!?'])(?=\s|$)", r"\1", text)
    text = re.sub(r"(^|[.!?]\s+)([a-z])", lambda m: m.group(1) + m.group(2).upper(), text)
    return text.strip()


def _neutralize(text: str, spans: Sequence[MarkerSpan], labels: Mapping[str, str]) -> str:
    out = text
    for s in reversed(_select_spans(spans)):
        new = labels.get(s.kind, "")
        out = out[: s.offset] + new + out[s.offset + s.length :]
    return _tidy(out)


def _phrase_spans(text: str, phrases: Sequence[str], kind: str) -> list[MarkerSpan]:
    spans = []
    for p in phrases:
        for m in re.finditer(r"(?<!\w)" + re.escape(p) + r"(?!\w)", text, re.IGNORECASE):
            spans.append(MarkerSpan(m.start(), m.end() - m.start(), kind))
    return spans


_PERSON_LABELS = {"entity0": "Person X", "entity1": "Person Y", "descriptor": ""}


def _neutral_question(inst: BenchmarkInstance) -> str:
    spans = _phrase_spans(inst.question, inst.entities[0], "entity0")
    spans += _phrase_spans(inst.question, inst.entities[1], "entity1")
    spans += _phrase_spans(inst.question, inst.descriptors, "descriptor")
    return _neutralize(inst.question, spans, _PERSON_LABELS)


def _bbq_base(inst: BenchmarkInstance) -> BaseQuestion:
    if not inst.marker_spans:
        raise MissingAnnotation(f"{inst.id}: no entity mentions located")
    labels = _PERSON_LABELS
    for kind in ("entity0", "entity1"):
        if not inst.spans(kind):
            raise IrreducibleInstance(f"{inst.id}: {kind} has no mention in the context")
    context = _neutralize(inst.text, inst.marker_spans, labels)
    question = _neutral_question(inst)
    entity_idx = [i for i in range(3) if i != inst.unknown_index]
    options = list(inst.options)
    for n, i in enumerate(entity_idx):
        options[i] = ("Person X", "Person Y")[n]
    text = templates()["base_questions"]["bbq"].format(
        context=context, question=question, options=", ".join(options)
    )
    aliases = tuple(
        (label, _lower_article(inst.spans(kind)[0].text(inst.text)))
        for label, kind in (("Person X", "entity0"), ("Person Y", "entity1"))
    )
    return BaseQuestion((context,), text, "neutralized_qa", tuple(options), inst.gold, aliases)


def _lower_article(mention: str) -> str:
    head, sep, rest = mention.partition(" ")
    return head.lower() + sep + rest if head in ("A", "An", "The") else mention


def _discrim_base(inst: BenchmarkInstance) -> BaseQuestion:
    if inst.base_text is None:
        raise MissingAnnotation(f"{inst.id}: no base scenario text")
    text = templates()["base_questions"]["discrim_eval"].format(text=inst.base_text)
    return BaseQuestion((inst.base_text,), text, "base_scenario", ("yes", "no"), None)


def _override(inst: BenchmarkInstance, derived: BaseQuestion | None) -> BaseQuestion:
    ov = inst.base_override
    statements = tuple(ov.get("candidate_statements", derived.candidate_statements if derived else ()))
    if "question_text" not in ov and derived is None:
        raise MissingAnnotation(f"{inst.id}: base_override needs question_text")
    kind = {"winobias": "likelihood_comparison", "bbq": "neutralized_qa"}.get(inst.benchmark, "base_scenario")
    if "question_text" in ov:
        text = ov["question_text"]
    elif inst.benchmark == "winobias" and len(statements) == 2:
        text = templates()["base_questions"]["winobias"].format(s1=statements[0], s2=statements[1])
    else:
        text = derived.question_text
    options = tuple(ov.get("options", derived.options if derived else ()))
    aliases = derived.aliases if derived else ()
    return BaseQuestion(statements, text, kind, options, inst.gold, aliases)


def derive_base_question(instance: BenchmarkInstance) -> BaseQuestion:
    """Social-agnostic reformulation of ``instance``.

    WinoBias: the pronoun replaced by each occupation, compared for
    real-life likelihood. BBQ: entities renamed Person X / Person Y and
    descriptors removed. Discrim-Eval: the demographic-free scenario. An
    instance-level ``base_override`` takes precedence over the rules.
    Raises :class:`IrreducibleInstance` if any social marker survives.
    """
    builders = {"winobias": _winobias_base, "bbq": _bbq_base, "discrim_eval": _discrim_base}
    derived = None
    if instance.base_override is not None:
        try:
            derived = builders[instance.benchmark](instance)
        except (MissingAnnotation, IrreducibleInstance):
            derived = None
        bq = _override(instance, derived)
    else:
        bq = builders[instance.benchmark](instance)
    leftovers = base_question_markers(bq, instance)
    if leftovers:
        raise IrreducibleInstance(f"{instance.id}: social markers survive neutralization: {sorted(set(leftovers))}")
    return bq


# ---------------------------------------------------------------- clauses


def _template(benchmark: str, category: str | None, strategy: str) -> dict:
    clauses = templates()["clauses"]
    for key in (f"{benchmark}/{category}/{strategy}", f"{benchmark}/*/{strategy}", f"*/*/{strategy}"):
        if key in clauses:
            return clauses[key]
    raise UnsupportedCategoryForTemplate(f"no strategy {strategy} template for {benchmark}/{category}")


def _variant(family: dict, name: str, what: str) -> str:
    if name not in family:
        raise UnsupportedCategoryForTemplate(f"no {what} phrasing {name!r}")
    return family[name]


def _category(spec: StrategySpec, inst: BenchmarkInstance) -> str | None:
    return spec.social_category or inst.social_category


def category_phrase(category: str | None, benchmark: str) -> str:
    if category is None:
        if benchmark == "discrim_eval":
            return templates()["discrim_eval_category_phrase"]
        raise UnsupportedCategoryForTemplate(f"{benchmark} instance has no social category")
    phrases = lexicons()["category_phrases"]
    if category not in phrases:
        raise UnsupportedCategoryForTemplate(f"no phrase for category {category!r}")
    return phrases[category]


def plural(entity: str) -> str:
    """``"the driver"`` -> ``"drivers"``."""
    word = entity.split(" ", 1)[1] if entity.split(" ", 1)[0].lower() in ("the", "a", "an") else entity
    overrides = lexicons()["plurals"]
    if word in overrides:
        return overrides[word]
    if re.search(r"(s|sh|ch|x|z)$", word):
        return word + "es"
    if re.search(r"[^aeiou]y$", word):
        return word[:-1] + "ies"
    return word + "s"


def balance_clause(spec: StrategySpec, inst: BenchmarkInstance) -> str:
    family = _template(inst.benchmark, _category(spec, inst), "II")
    if inst.benchmark == "winobias":
        e1, e2 = inst.options
        if spec.level != "balanced":
            tmpl = _variant(family, "level", "counteract-level")
            return tmpl.format(e1=e1, e2=e2, male=100 - spec.level, female=spec.level)
        tmpl = _variant(family, spec.balance_phrasing, "Strategy II")
        return tmpl.format(E1=_cap(e1), e1=e1, e2=e2, p1=plural(e1), p2=plural(e2))
    if spec.level != "balanced":
        tmpl = _variant(family, "level", "counteract-level")
    else:
        tmpl = _variant(family, spec.balance_phrasing, "Strategy II")
    return tmpl.format(category=category_phrase(_category(spec, inst), inst.benchmark))


def avoid_clause(spec: StrategySpec, inst: BenchmarkInstance) -> str:
    family = _template(inst.benchmark, _category(spec, inst), "III")
    tmpl = _variant(family, spec.avoid_phrasing, "Strategy III")
    return tmpl.format(category=category_phrase(_category(spec, inst), inst.benchmark))


def _answer_index(bq: BaseQuestion, answer: str | int) -> int | None:
    """Index into the base options, or None for the equally-likely/unknown case."""
    if isinstance(answer, int) and not isinstance(answer, bool):
        idx = answer
    elif answer in (EQUALLY_LIKELY, UNKNOWN_OPTION):
        return None
    else:
        lowered = [o.lower() for o in bq.options]
        if str(answer).lower() not in lowered:
            raise ValueError(f"base answer {answer!r} is not one of {bq.options}")
        idx = lowered.index(str(answer).lower())
    if bq.kind == "likelihood_comparison" and idx == 2:
        return None
    return idx


def fact_clause(spec: StrategySpec, inst: BenchmarkInstance, bq: BaseQuestion, answer: str | int) -> str:
    """Strategy I clause built from the base question's extracted answer."""
    family = _template(inst.benchmark, _category(spec, inst), "I")
    idx = _answer_index(bq, answer)
    if inst.benchmark == "winobias":
        # quoted mid-sentence, so a final period would clash with the clause's comma
        s1, s2 = (c.rstrip(".!? ") for c in bq.candidate_statements)
        if idx is None:
            return _variant(family, "equal", "equally-likely").format(s1=s1, s2=s2)
        chosen, other = (s1, s2) if idx == 0 else (s2, s1)
        return _variant(family, spec.fact_phrasing, "Strategy I").format(chosen=chosen, other=other)
    if inst.benchmark == "bbq":
        (_, x), (_, y) = bq.aliases
        q = _neutral_question(inst)
        if idx is None or idx == inst.unknown_index:
            return _variant(family, "equal", "unknown-answer").format(x=x, y=y, question=q)
        tmpl = _variant(family, spec.fact_phrasing, "Strategy I")
        return tmpl.format(x=x, y=y, question=q, answer=bq.options[idx])
    value = bq.options[idx] if idx is not None else str(answer)
    return _variant(family, spec.fact_phrasing, "Strategy I").format(answer=value)


def original_question(inst: BenchmarkInstance) -> str:
    qt = templates()["questions"]
    if inst.benchmark == "winobias":
        return qt["winobias"].format(pronoun=inst.pronoun, sentence=inst.text)
    if inst.benchmark == "bbq":
        return qt["bbq"].format(context=inst.text, question=inst.question, options=", ".join(inst.options))
    return qt["discrim_eval"].format(text=inst.text)


def _lower_first(piece: str) -> str:
    m = re.match(r"([A-Za-z]+)", piece)
    if m and m.group(1).lower() in _LOWERABLE and not m.group(1).isupper():
        return piece[0].lower() + piece[1:]
    if m and m.group(1) == "A" and piece[1:2] == " ":
        return "a" + piece[1:]
    return piece


SLOT_TOKEN = "{{" + SLOT + "}}"


def join_pieces(pieces: Sequence[str]) -> str:
    """Join clauses with spaces, lowercasing a piece that follows a comma.

    A deferred fact-clause slot counts as ending in a comma, since every
    fact clause does.
    """
    out: list[str] = []
    for piece in pieces:
        if out and (out[-1].endswith((",", ",'")) or out[-1] == SLOT_TOKEN):
            piece = _lower_first(piece)
        out.append(piece)
    return " ".join(out)


# ---------------------------------------------------------------- plans


def _metadata(spec: StrategySpec | None, inst: BenchmarkInstance, **extra) -> dict:
    meta = {"instance_id": inst.id, "benchmark": inst.benchmark}
    if spec is not None:
        meta["strategy_set"] = spec.label
        if "II" in spec.strategy_set:
            meta["counteract_level"] = spec.level
    meta.update(extra)
    return meta


def _final_pieces(spec: StrategySpec, inst: BenchmarkInstance, fact: str | None) -> list[str]:
    pieces: list[str] = []
    for s in CLAUSE_ORDER:
        if s not in spec.strategy_set:
            continue
        if s == "II":
            pieces.append(balance_clause(spec, inst))
        elif s == "I":
            pieces.append(fact if fact is not None else SLOT_TOKEN)
        else:
            pieces.append(avoid_clause(spec, inst))
    pieces.append(original_question(inst))
    return pieces


def render_strategy(
    spec: StrategySpec, instance: BenchmarkInstance, base_answer: str | int | None = None
) -> PromptPlan:
    """Single-stage plan: II, I, III clauses then the original question.

    With I in the set and no ``base_answer`` the fact clause is left as the
    ``{{BASE_ANSWER}}`` slot; fill it with :func:`fill_base_answer`.
    """
    fact = None
    if "I" in spec.strategy_set and base_answer is not None:
        fact = fact_clause(spec, instance, derive_base_question(instance), base_answer)
    pieces = _final_pieces(spec, instance, fact)
    content = join_pieces(pieces)
    slots = frozenset({SLOT}) if SLOT_TOKEN in content else frozenset()
    return PromptPlan((Turn("user", content, 1),), slots, _metadata(spec, instance))


def compose_ddp(instance: BenchmarkInstance, spec: StrategySpec) -> PromptPlan:
    """Two-stage plan: the base question, then the fact-prefixed original question."""
    if "I" not in spec.strategy_set:
        raise ValueError("a two-stage plan needs strategy I")
    bq = derive_base_question(instance)
    final = join_pieces(_final_pieces(spec, instance, None))
    turns = (Turn("user", bq.question_text, 1), Turn("user", final, 2))
    meta = _metadata(spec, instance, plan="ddp", base_options=list(bq.options))
    return PromptPlan(turns, frozenset({SLOT}), meta)


def fill_base_answer(plan: PromptPlan, instance: BenchmarkInstance, spec: StrategySpec, answer: str | int) -> PromptPlan:
    """Fill the fact-clause slot from the base question's extracted answer."""
    clause = fact_clause(spec, instance, derive_base_question(instance), answer)
    return plan.fill(**{SLOT: clause})


def render_baseline(kind: str, instance: BenchmarkInstance) -> PromptPlan:
    """Default (question only), zero-shot CoT, or fixed few-shot ICL prompts."""
    question = original_question(instance)
    if kind == "default":
        turns = (Turn("user", question),)
    elif kind == "cot":
        turns = (Turn("user", f"{question} {templates()['cot_suffix']}"),)
    elif kind == "icl":
        demos = templates()["icl_examples"].get(instance.benchmark)
        if not demos:
            raise UnsupportedCategoryForTemplate(f"no ICL examples for {instance.benchmark}")
        turns = ()
        for d in demos:
            turns += (Turn("user", d["question"]), Turn("assistant", d["answer"]))
        turns += (Turn("user", question),)
    else:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    return PromptPlan(turns, frozenset(), _metadata(None, instance, baseline=kind))
