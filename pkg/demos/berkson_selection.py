"""Selection can manufacture dependence between unrelated variables.

Two diseases X1 and X2 are independent in the population. Each causes a
symptom (Y1, Y2). Five different selection mechanisms decide who ends up in
a dataset, and we measure I(X1; X2) exactly among the selected.

Run: python demos/berkson_selection.py
"""
import numpy as np

from fairprompt.causal import condition, joint_distribution, mutual_information
from fairprompt.causal.models import berkson_graph

graph = berkson_graph()
dist = joint_distribution(graph)

# Without selection the diseases share nothing.
print(f"{'population':<34} I(X1;X2) = {mutual_information(dist, 'X1', 'X2'):.3e} nats")

cases = {
    "S1: select on cause X1": "S1",
    "S2: select on effect Y1": "S2",
    "S3: select on X2 and Y2": "S3",
    "S4: admitted if Y1 or Y2": "S4",
    "S5: select on X1 and X2 jointly": "S5",
}
for label, node in cases.items():
    mi = mutual_information(dist, "X1", "X2", {node: 1})
    print(f"{label:<34} I(X1;X2 | {node}=1) = {mi:.3e} nats")

# S3 is tuned so the causal link X2 -> Y2 disappears among the selected.
print()
print(f"I(X2;Y2) in the population       = {mutual_information(dist, 'X2', 'Y2'):.4f} nats")
print(f"I(X2;Y2 | S3=1)                  = {mutual_information(dist, 'X2', 'Y2', {'S3': 1}):.3e} nats")

# Hospital admission (S4) is the classic case: among admitted patients,
# having one disease makes the other less likely, since either suffices.
np.set_printoptions(precision=4, suppress=True)
print()
print("P(X1, X2) in the population:")
print(dist.marginal(["X1", "X2"]).table)
print("P(X1, X2 | admitted):")
print(condition(dist, [("S4", 1)]).marginal(["X1", "X2"]).table)
