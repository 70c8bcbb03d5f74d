"""What the model actually sees under each prompting condition.

Run: python demos/prompt_gallery.py
"""
from pathlib import Path

import fairprompt
from fairprompt.bench import load_bbq, load_winobias
from fairprompt.strategy import (
    StrategySpec,
    compose_ddp,
    derive_base_question,
    fill_base_answer,
    render_baseline,
    render_strategy,
)

DATA = Path(fairprompt.__file__).parent / "data"
winobias = {i.id: i for i in load_winobias(DATA / "winobias" / "winobias_16.jsonl")}
bbq = {i.id: i for i in load_bbq(DATA / "bbq" / "bbq_fixture.jsonl")}


def show(title, plan):
    print(f"--- {title}")
    for turn in plan.turns:
        print(f"[stage {turn.stage} {turn.role}] {turn.content}")
    print()


inst = winobias["wb-02"]
print(f"instance {inst.id}: {inst.text}\n")

show("default", render_baseline("default", inst))
show("chain of thought", render_baseline("cot", inst))
show("II: either gender", render_strategy(StrategySpec(frozenset({"II"})), inst))
show("II: counteract 100%", render_strategy(StrategySpec(frozenset({"II"}), counteract_level=100), inst))
show("III: avoid gender", render_strategy(StrategySpec(frozenset({"III"})), inst))

# Two-stage protocol: the base question carries no gender at all.
bq = derive_base_question(inst)
print(f"base question ({bq.kind}): {bq.question_text}\n")
spec = StrategySpec(frozenset({"I", "II"}))
plan = compose_ddp(inst, spec)
show("DDP before the base answer is known", plan)
show("DDP after the model chose Sentence 1", fill_base_answer(plan, inst, spec, 0))

# BBQ: entities become Person X / Person Y in the base question.
item = bbq["rel-1"] if "rel-1" in bbq else next(iter(bbq.values()))
print(f"BBQ {item.id}: {item.text} {item.question}\n")
bq = derive_base_question(item)
print(f"base question: {bq.question_text}\n")
spec = StrategySpec(frozenset({"I", "III"}))
show("BBQ DDP", fill_base_answer(compose_ddp(item, spec), item, spec, item.gold))
