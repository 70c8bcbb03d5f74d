"""When does conditioning on a well-followed prompt remove the bias?

The reasoning graph has a social attribute A, the answer Y, a dataset
selection S and a prompt-following node PPC whose parents are A, the
social-agnostic fact and the salient text. Conditioning on S=1 ties A to
the answer; the question is which PPC tables undo that.

Run: python demos/prompt_selection_check.py
"""
import numpy as np

from fairprompt.causal import construct_ppc, search_ppc, verify_theorem1
from fairprompt.causal.models import (
    REASONING_ROLES,
    random_reasoning_graph,
    theorem_fixture_graph,
    xor_counterexample_graph,
)

# 1. A prompt that is ignored (PPC constant) leaves the selection bias intact.
plain = theorem_fixture_graph(select_with_ppc=False)
print("prompt ignored:")
print(verify_theorem1(plain, REASONING_ROLES).table())

# 2. A PPC table built so that A is independent of (fact, salient) jointly
#    among the selected makes every premise hold and the answer follows.
print("\nPPC constructed:")
print(verify_theorem1(theorem_fixture_graph(select_with_ppc=True), REASONING_ROLES).table())

# 3. Random search finds tables that shrink the premises, but rarely to zero.
found = search_ppc(plain, REASONING_ROLES, trials=200, seed=0)
print(f"\nrandom search, 200 trials: best max premise MI {found.best_trace[-1]:.3e} nats")

# 4. Pairwise independence is not enough: with an XOR link, A is independent
#    of each parent separately yet determined by the pair.
xor = verify_theorem1(xor_counterexample_graph(), REASONING_ROLES)
print("\nXOR counterexample:")
print(xor.table())
print(f"I(A; fact, salient) = {xor.joint_parents.mutual_information:.4f} nats (ln 2 = {np.log(2):.4f})")

# 5. Constructed tables work on any randomly drawn graph of this shape.
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(100):
    g = random_reasoning_graph(rng, constructed_ppc=False)
    g = g.with_selection("PPC", construct_ppc(g, REASONING_ROLES))
    worst = max(worst, verify_theorem1(g, REASONING_ROLES).conclusion.mutual_information)
print(f"\n100 random graphs with constructed PPC: worst conclusion MI {worst:.2e} nats")
