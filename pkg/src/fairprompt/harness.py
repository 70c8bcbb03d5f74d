"""Run orchestration: benchmark x strategy x model, then metrics and reports.

A run is described by a JSON config (schema in ``docs/config.md``); its
artifacts land in ``<output_dir>/<run-id>/`` where the run id is a hash
of the config document, so rerunning the same config reuses the directory
and its response cache.
"""
from __future__ import annotations

import hashlib
import json
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bench import (
    BenchmarkInstance,
    ExclusionList,
    apply_exclusions,
    expand_discrim_eval,
    filter_base_refusals,
    load_bbq,
    load_discrim_templates,
    load_exclusions,
    load_winobias,
)
from .causal import (
    joint_distribution,
    load_graph,
    search_ppc,
    test_independence,
    verify_theorem1,
)
from .errors import (
    ConfigError,
    EmptyDenominator,
    FairPromptError,
    IrreducibleInstance,
    ParseError,
    RunError,
    YesTokenAbsent,
)
from .gateway import (
    ChatRequest,
    ExtractedAnswer,
    Gateway,
    OpenAICompatibleBackend,
    ResponseCache,
    iterative_answer,
    script_mock,
    yes_probability,
)
from .metrics import EvalRecord, emit_report
from .strategy import (
    BASELINES,
    EQUALLY_LIKELY,
    UNKNOWN_OPTION,
    StrategySpec,
    compose_ddp,
    derive_base_question,
    fill_base_answer,
    render_baseline,
    render_strategy,
)

BENCHMARK_KINDS = ("winobias", "bbq", "discrim_eval")


@dataclass(frozen=True)
class StrategyEntry:
    """A named prompting condition: a strategy combination or a baseline."""

    name: str
    spec: StrategySpec | None = None
    baseline: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyEntry":
        if "baseline" in d:
            if d["baseline"] not in BASELINES:
                raise ConfigError(f"unknown baseline {d['baseline']!r}")
            return cls(d.get("name", d["baseline"]), baseline=d["baseline"])
        if "strategies" not in d:
            raise ConfigError("strategy entry needs 'strategies' or 'baseline'")
        sset = d["strategies"]
        labels = sset.split("+") if isinstance(sset, str) else sset
        kwargs = {k: d[k] for k in ("counteract_level", "social_category", "fact_phrasing", "balance_phrasing", "avoid_phrasing") if k in d}
        try:
            spec = StrategySpec(frozenset(s.strip() for s in labels), **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(d.get("name", spec.label), spec=spec)


@dataclass(frozen=True)
class RunConfig:
    doc: dict
    base_dir: Path
    benchmark: str
    paths: tuple[Path, ...]
    exclusions: tuple[Path, ...]
    task_type: str | None
    polarity: str | None
    limit: int | None
    strategies: tuple[StrategyEntry, ...]
    model: dict
    concurrency: int = 4
    rate_limit: float | None = None
    cache: Path | None = None
    output_dir: Path = Path("runs")
    seed: int = 0
    aggregation: str = "mean"
    max_tokens: int = 512
    renormalize_yes: bool = False

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "RunConfig":
        base = Path(base_dir)

        def resolve(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base / p

        try:
            bench = doc["benchmark"]
            kind = bench["kind"]
            paths = bench["paths"] if isinstance(bench["paths"], list) else [bench["paths"]]
            model = dict(doc["model"])
            entries = tuple(StrategyEntry.from_dict(s) for s in doc["strategies"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"config is missing {exc}") from exc
        if kind not in BENCHMARK_KINDS:
            raise ConfigError(f"unknown benchmark kind {kind!r}")
        if not entries:
            raise ConfigError("config lists no strategies")
        if len({e.name for e in entries}) != len(entries):
            raise ConfigError("strategy names must be unique")
        if model.get("kind") not in ("mock", "openai"):
            raise ConfigError("model.kind must be 'mock' or 'openai'")
        if "name" not in model:
            raise ConfigError("model.name is required")
        if model["kind"] == "mock":
            if "fixture" not in model:
                raise ConfigError("mock model needs a fixture path")
            model["fixture"] = resolve(model["fixture"])
        excl = bench.get("exclusions") or []
        excl = excl if isinstance(excl, list) else [excl]
        cfg = cls(
            doc=doc,
            base_dir=base,
            benchmark=kind,
            paths=tuple(resolve(p) for p in paths),
            exclusions=tuple(resolve(p) for p in excl),
            task_type=bench.get("task_type"),
            polarity=bench.get("polarity"),
            limit=bench.get("limit"),
            strategies=entries,
            model=model,
            concurrency=int(doc.get("concurrency", 4)),
            rate_limit=doc.get("rate_limit"),
            cache=resolve(doc["cache"]) if doc.get("cache") else None,
            output_dir=resolve(doc["output_dir"]) if doc.get("output_dir") else Path("runs"),
            seed=int(doc.get("seed", 0)),
            aggregation=doc.get("aggregation", "mean"),
            max_tokens=int(doc.get("max_tokens", 512)),
            renormalize_yes=bool(doc.get("renormalize_yes", False)),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        files = list(self.paths) + list(self.exclusions)
        if self.model["kind"] == "mock":
            files.append(self.model["fixture"])
        missing = [str(p) for p in files if not p.exists()]
        if missing:
            raise ConfigError(f"missing file(s): {', '.join(missing)}")
        if self.aggregation not in ("mean", "median"):
            raise ConfigError("aggregation must be mean or median")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from exc
    return RunConfig.from_dict(doc, path.parent)


def make_backend(config: RunConfig):
    m = config.model
    if m["kind"] == "mock":
        return script_mock(m["fixture"], strict=m.get("strict"))
    backend = OpenAICompatibleBackend(
        m.get("base_url", "https://api.openai.com/v1"),
        path=m.get("path", "/chat/completions"),
        api_key_env=m.get("api_key_env", "OPENAI_API_KEY"),
        supports_logprobs=m.get("supports_logprobs", True),
    )
    backend.check_credentials()
    return backend


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    records: list[EvalRecord]
    report_json: str
    report_csv: str
    backend_calls: int = 0
    errors: list[str] = field(default_factory=list)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "strategy"


class Runner:
    """Executes every (instance, strategy) pair of a config against a gateway."""

    def __init__(self, config: RunConfig, gateway: Gateway):
        self.config = config
        self.gateway = gateway
        self.model = config.model["name"]

    # -- loading

    def load(self) -> tuple[list[BenchmarkInstance], dict[str, BenchmarkInstance]]:
        cfg = self.config
        exclusions = ExclusionList()
        for p in cfg.exclusions:
            exclusions = exclusions.merged(load_exclusions(p))
        bases: dict[str, BenchmarkInstance] = {}
        if cfg.benchmark == "winobias":
            instances = load_winobias(cfg.paths, cfg.task_type, cfg.polarity, exclusions)
        elif cfg.benchmark == "bbq":
            instances = load_bbq(cfg.paths, exclusions=exclusions)
        else:
            templates = [t for p in cfg.paths for t in load_discrim_templates(p)]
            instances, bases = expand_discrim_eval(templates)
            if exclusions:
                exclusions.resolve(bases)
                instances = apply_exclusions(instances, exclusions, by="group")
        if cfg.limit is not None and cfg.limit < len(instances):
            rng = np.random.default_rng(cfg.seed)
            keep = np.sort(rng.choice(len(instances), size=cfg.limit, replace=False))
            instances = [instances[i] for i in keep]
        return instances, bases

    # -- queries

    def _ask(self, turns, options, specials=None) -> ExtractedAnswer:
        return iterative_answer(self.gateway, self.model, turns, options, specials, self.config.max_tokens)

    def _base(self, inst: BenchmarkInstance) -> tuple[ExtractedAnswer | None, str | None]:
        try:
            bq = derive_base_question(inst)
        except IrreducibleInstance as exc:
            return None, f"irreducible: {exc}"
        specials = {}
        if inst.benchmark == "winobias":
            specials = {2: EQUALLY_LIKELY}
        elif inst.benchmark == "bbq":
            specials = {inst.unknown_index: UNKNOWN_OPTION}
        return self._ask([("user", bq.question_text)], bq.options, specials), None

    def _final_turns(self, entry: StrategyEntry, inst: BenchmarkInstance, base: ExtractedAnswer | None):
        if entry.baseline is not None:
            plan = render_baseline(entry.baseline, inst)
            return [(t.role, t.content) for t in plan.turns]
        if "I" in entry.spec.strategy_set:
            plan = fill_base_answer(compose_ddp(inst, entry.spec), inst, entry.spec, base.index)
            return [(m["role"], m["content"]) for m in plan.messages(2)]
        plan = render_strategy(entry.spec, inst)
        return [(m["role"], m["content"]) for m in plan.messages(1)]

    def _needs_base(self) -> bool:
        if self.config.benchmark == "winobias":
            return True
        return any(e.spec is not None and "I" in e.spec.strategy_set for e in self.config.strategies)

    def process(self, inst: BenchmarkInstance, base_override: ExtractedAnswer | None = None):
        """All strategy records for one instance plus transcript entries."""
        records: list[EvalRecord] = []
        transcripts: dict[str, dict] = {}
        common = dict(
            instance_id=inst.id,
            benchmark=inst.benchmark,
            model=self.model,
            polarity=inst.polarity,
            task_type=inst.task_type,
            social_category=inst.social_category,
            gold=inst.gold,
            demographics=inst.demographics,
            group=inst.group,
        )
        if inst.excluded:
            for e in self.config.strategies:
                records.append(EvalRecord(strategy=e.name, excluded=True, exclusion_reason=inst.exclusion_reason, **common))
            return records, transcripts
        base, note = (base_override, None)
        if base is None and self._needs_base() and inst.benchmark != "discrim_eval":
            base, note = self._base(inst)
        base_correct = None
        if base is not None and not base.refused and inst.gold is not None:
            base_correct = base.index == inst.gold
        if base is not None:
            transcripts["base"] = {"instance_id": inst.id, "stages": list(base.transcript)}
        for e in self.config.strategies:
            uses_fact = e.spec is not None and "I" in e.spec.strategy_set
            rec = dict(common, strategy=e.name, base_answer=base, base_correct=base_correct)
            if uses_fact and base is None:
                records.append(EvalRecord(**rec, excluded=True, exclusion_reason="irreducible_instance", note=note))
                continue
            if uses_fact and base.refused:
                records.append(EvalRecord(**rec, refused=True, note="base question refused"))
                continue
            turns = self._final_turns(e, inst, base)
            if inst.benchmark == "discrim_eval":
                record, reply = self._decision(rec, turns)
                records.append(record)
                transcripts[e.name] = {"instance_id": inst.id, "stages": [{"turns": [list(t) for t in turns], "reply": reply}]}
                continue
            specials = {inst.unknown_index: UNKNOWN_OPTION} if inst.benchmark == "bbq" else {}
            ans = self._ask(turns, inst.options, specials)
            transcripts[e.name] = {"instance_id": inst.id, "stages": list(ans.transcript)}
            correct = None if ans.refused else ans.index == inst.gold
            cell = None if correct is None or base_correct is None else "TF"[not base_correct] + "TF"[not correct]
            records.append(EvalRecord(**rec, answer=ans, final_correct=correct, category=cell, refused=ans.refused))
        return records, transcripts

    def _decision(self, rec: dict, turns) -> tuple[EvalRecord, str]:
        req = ChatRequest(self.model, turns, want_logprobs=True, max_tokens=min(16, self.config.max_tokens))
        resp = self.gateway.complete(req)
        try:
            p = yes_probability(resp, renormalize=self.config.renormalize_yes)
        except YesTokenAbsent:
            return EvalRecord(**rec, refused=True, note="no Yes token in the decision response"), resp.text
        return EvalRecord(**rec, yes_probability=p), resp.text

    def discrim_bases(self, bases: dict[str, BenchmarkInstance], pool) -> tuple[dict[str, ExtractedAnswer], ExclusionList]:
        ids = sorted(bases)
        answers = list(pool.map(lambda t: self._ask([("user", derive_base_question(bases[t]).question_text)], ("yes", "no")), ids))
        by_id = dict(zip(ids, answers))
        excl = filter_base_refusals({t: a.value for t, a in by_id.items()}, expected=ids)
        return by_id, excl


def _write_artifacts(run_dir: Path, records, transcripts, names) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    with (run_dir / "records.jsonl").open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    tdir = run_dir / "transcripts"
    tdir.mkdir(exist_ok=True)
    for name in names:
        rows = [t[name] for t in transcripts if name in t]
        if rows:
            with (tdir / f"{_slug(name)}.jsonl").open("w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def cmd_run(config: RunConfig | str | Path, backend=None) -> RunResult:
    """Execute a run and write records, reports and transcripts.

    ``backend`` overrides the one described by the config (tests inject
    mocks this way). Live backends must have credentials before any
    instance is touched.
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    if backend is None:
        backend = make_backend(cfg)
    elif getattr(backend, "is_live", False):
        backend.check_credentials()
    run_dir = cfg.output_dir / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cache = ResponseCache(cfg.cache or run_dir / "cache.jsonl")
    gateway = Gateway(backend, cache, cfg.concurrency, cfg.rate_limit)
    runner = Runner(cfg, gateway)
    instances, bases = runner.load()
    results: list[tuple[list[EvalRecord], dict]] = []
    names = ["base"] + [e.name for e in cfg.strategies]
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        base_answers: dict[str, ExtractedAnswer] = {}
        if cfg.benchmark == "discrim_eval" and bases:
            base_answers, refused = runner.discrim_bases(bases, pool)
            instances = apply_exclusions(instances, refused, by="group")
        futures = [pool.submit(runner.process, inst, base_answers.get(inst.group)) for inst in instances]
        for inst, fut in zip(instances, futures):
            try:
                results.append(fut.result())
            except FairPromptError as exc:
                for f in futures:
                    f.cancel()
                done = _ordered(results, cfg)
                _write_artifacts(run_dir, done, [t for _, t in results], names)
                raise RunError(f"{inst.id}: {type(exc).__name__}: {exc}") from exc
    records = _ordered(results, cfg)
    _write_artifacts(run_dir, records, [t for _, t in results], names)
    try:
        rjson = emit_report(records, "json", cfg.aggregation)
        rcsv = emit_report(records, "csv", cfg.aggregation)
    except EmptyDenominator as exc:
        return RunResult(cfg.run_id, run_dir, records, "", "", gateway.backend_calls, [str(exc)])
    (run_dir / "report.json").write_text(rjson, encoding="utf-8")
    (run_dir / "report.csv").write_text(rcsv, encoding="utf-8")
    return RunResult(cfg.run_id, run_dir, records, rjson, rcsv, gateway.backend_calls)


def _ordered(results, cfg: RunConfig) -> list[EvalRecord]:
    """Strategy-major ordering, instances in load order within a strategy."""
    order = {e.name: k for k, e in enumerate(cfg.strategies)}
    flat = [(order[r.strategy], i, r) for i, (recs, _) in enumerate(results) for r in recs]
    return [r for _, _, r in sorted(flat, key=lambda t: (t[0], t[1]))]


def load_records(path: str | Path) -> list[EvalRecord]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(EvalRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise ParseError(f"bad record ({exc})", line=lineno, path=path) from exc
    return out


def cmd_report(records_path: str | Path, formats: Sequence[str] = ("json",), out_dir: str | Path | None = None, aggregation: str = "mean") -> dict[str, Path]:
    """Recompute reports from a records file without any model calls."""
    records = load_records(records_path)
    target = Path(out_dir) if out_dir is not None else Path(records_path).parent
    target.mkdir(parents=True, exist_ok=True)
    written = {}
    for fmt in formats:
        text = emit_report(records, fmt, aggregation)
        path = target / f"report.{fmt}"
        path.write_text(text, encoding="utf-8")
        written[fmt] = path
    return written


# ---------------------------------------------------------------- causal checks


def _parse_evidence(items: Sequence[str]) -> list[tuple[str, str]]:
    out = []
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"evidence must look like NAME=VALUE, got {item!r}")
        out.append((name.strip(), value.strip()))
    return out


@dataclass
class VerifyOutcome:
    exit_code: int
    lines: list[str]
    document: dict


def cmd_verify_causal(
    graph_path: str | Path,
    roles: dict | str | Path | None = None,
    trials: int = 0,
    seed: int = 0,
    threshold: float = 1e-9,
    independent: Sequence[str] | None = None,
    given: Sequence[str] = (),
) -> VerifyOutcome:
    """Check the theorem on a graph file and/or test one independence demand.

    Exit code 1 when the premises hold but the conclusion fails, or when a
    demanded independence turns out to be a dependence; 0 otherwise.
    """
    graph, embedded_roles = load_graph(graph_path)
    if isinstance(roles, (str, Path)):
        roles = json.loads(Path(roles).read_text(encoding="utf-8"))
    roles = roles or embedded_roles
    lines: list[str] = []
    doc: dict = {"graph": str(graph_path), "joint_states": graph.n_states}
    code = 0
    if independent:
        x, y = independent
        dist = joint_distribution(graph)
        evidence = []
        for name, raw in _parse_evidence(given):
            evidence.append((name, dist.domain(name)[dist.value_index(name, raw)]))
        rep = test_independence(dist, x, y, evidence, threshold)
        doc["demand"] = rep.to_dict()
        cond = ", ".join(f"{n}={v}" for n, v in evidence)
        lines.append(f"I({x}; {y}{' | ' + cond if cond else ''}) = {rep.mutual_information:.6e} nats -> {rep.verdict}")
        if not rep.independent:
            code = 1
    if roles:
        report = verify_theorem1(graph, roles, threshold)
        if trials > 0:
            found = search_ppc(graph, roles, trials, seed, threshold)
            doc["search"] = {"trials": trials, "seed": seed, "best_max_premise_mi": found.best_trace[-1], "table": found.table}
            lines.append(f"search_ppc: best max premise MI after {trials} trials = {found.best_trace[-1]:.6e}")
            report = found.report if found.report.max_premise_mi < report.max_premise_mi else report
        doc["theorem"] = report.to_dict()
        lines.append(report.table())
        if report.status == "counterexample":
            code = 1
    elif not independent:
        raise ConfigError("nothing to verify: give a role mapping or an independence demand")
    doc["exit_code"] = code
    return VerifyOutcome(code, lines, doc)


def print_lines(lines: Sequence[str], stream=None) -> None:
    stream = stream or sys.stdout
    for line in lines:
        print(line, file=stream)
