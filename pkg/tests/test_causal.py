import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairprompt.causal import (
    build_graph,
    condition,
    construct_ppc,
    entropy,
    joint_distribution,
    load_graph,
    mutual_information,
    save_graph,
    search_ppc,
    test_independence as independence_test,
    verify_theorem1,
)
from fairprompt.causal.models import (
    REASONING_ROLES,
    disconnected_graph,
    berkson_graph,
    random_reasoning_graph,
    theorem_fixture_graph,
    xor_counterexample_graph,
)
from fairprompt.errors import (
    CptShapeMismatch,
    CycleDetected,
    GraphError,
    RoleUnmapped,
    RowNotNormalized,
    StateSpaceTooLarge,
    TopologyMismatch,
    UnknownVariable,
    ZeroProbabilityEvidence,
)

from oracles import berkson_hand, naive_joint, naive_mi, random_small_graph

BIN = [0, 1]


def chain():
    return build_graph(
        [("X", BIN), ("Y", BIN), ("Z", BIN)],
        [("X", "Y"), ("Y", "Z")],
        {"X": {"": [0.4, 0.6]}, "Y": {"0": [0.9, 0.1], "1": [0.2, 0.8]}, "Z": {"0": [0.7, 0.3], "1": [0.1, 0.9]}},
    )


# ---------------------------------------------------------------- graphs


def test_cycle_rejected():
    with pytest.raises(CycleDetected):
        build_graph([("X", BIN), ("Y", BIN)], [("X", "Y"), ("Y", "X")], {})


def test_row_must_sum_to_one():
    with pytest.raises(RowNotNormalized):
        build_graph([("X", BIN)], [], {"X": {"": [0.5, 0.6]}})


def test_missing_cpt_row():
    with pytest.raises(CptShapeMismatch):
        build_graph([("X", BIN), ("Y", BIN)], [("X", "Y")], {"X": {"": [0.5, 0.5]}, "Y": {"0": [0.5, 0.5]}})


def test_selection_node_must_be_sink():
    nodes = [("X", BIN), {"name": "S", "domain": BIN, "role": "selection"}, ("Y", BIN)]
    with pytest.raises(GraphError):
        build_graph(nodes, [("X", "S"), ("S", "Y")], {"X": {"": [0.5, 0.5]}, "Y": {"0": [1, 0], "1": [0, 1]}}, {"S": {"0": 0.1, "1": 0.9}})


def test_state_cap():
    nodes = [(f"N{i}", BIN) for i in range(10)]
    cpts = {f"N{i}": {"": [0.5, 0.5]} for i in range(10)}
    with pytest.raises(StateSpaceTooLarge):
        build_graph(nodes, [], cpts, max_states=512)


def test_unknown_variable():
    with pytest.raises(UnknownVariable):
        mutual_information(joint_distribution(chain()), "X", "Q")


def test_zero_probability_evidence():
    g = build_graph(
        [("X", BIN), {"name": "S", "domain": BIN, "role": "selection"}],
        [("X", "S")],
        {"X": {"": [0.5, 0.5]}},
        {"S": {"0": 0.0, "1": 0.0}},
    )
    with pytest.raises(ZeroProbabilityEvidence):
        condition(joint_distribution(g), {"S": 1})


def test_joint_sums_to_one_and_matches_naive():
    g = berkson_graph()
    dist = joint_distribution(g)
    assert dist.total() == pytest.approx(1.0, abs=1e-12)
    naive = naive_joint(g)
    for values, p in naive.items():
        assert dist.probability(dict(zip(g.names, values))) == pytest.approx(p, abs=1e-15)


def test_graph_roundtrip(tmp_path):
    g = theorem_fixture_graph()
    save_graph(g, tmp_path / "g.json", REASONING_ROLES)
    g2, roles = load_graph(tmp_path / "g.json")
    assert roles == REASONING_ROLES
    assert g2.describe() == g.describe()
    assert np.array_equal(joint_distribution(g2).table, joint_distribution(g).table)


def test_shipped_graphs_match_models(data_dir):
    pairs = {
        "berkson_hospital.json": berkson_graph(),
        "theorem_fixture.json": theorem_fixture_graph(True),
        "theorem_fixture_no_ppc_select.json": theorem_fixture_graph(False),
        "disconnected.json": disconnected_graph(),
        "xor_counterexample.json": xor_counterexample_graph(),
    }
    for name, model in pairs.items():
        g, _ = load_graph(data_dir / "graphs" / name)
        assert g.describe() == model.describe(), name


# ---------------------------------------------------------------- MI


def test_chain_mi_matches_naive():
    g = chain()
    d = joint_distribution(g)
    assert mutual_information(d, "X", "Z") == pytest.approx(naive_mi(g, ["X"], ["Z"]), abs=1e-12)
    # X and Z are d-separated by Y
    assert mutual_information(d, "X", "Z", conditioning=["Y"]) == 0.0
    assert mutual_information(d, "X", "Z", given={"Y": 1}) == 0.0


def test_mi_bounded_by_entropy():
    d = joint_distribution(chain())
    assert mutual_information(d, "X", "Y") <= min(entropy(d, "X"), entropy(d, "Y")) + 1e-12
    # I(X;X) would be H(X); the same variable twice is rejected instead
    with pytest.raises(ValueError):
        mutual_information(d, "X", "X")


def test_independence_report_fields():
    rep = independence_test(joint_distribution(chain()), "X", "Z", [("Y", 0)], threshold=1e-9)
    assert rep.independent and rep.conditioning_set == (("Y", 0),)
    assert json.loads(json.dumps(rep.to_dict()))["verdict"] == "independent"


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_mi_properties_random(seed, n):
    rng = np.random.default_rng(seed)
    g, obs, sel = random_small_graph(rng, n)
    d = joint_distribution(g)
    ev = [(s, 1) for s in sel]
    x, y = obs[0], obs[-1]
    forward = mutual_information(d, x, y, ev)
    backward = mutual_information(d, y, x, ev)
    assert forward >= 0.0
    assert forward == pytest.approx(backward, abs=1e-13)
    post = condition(d, ev)
    assert forward <= min(entropy(post, x), entropy(post, y)) + 1e-12
    assert abs(forward - naive_mi(g, [x], [y], ev)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_conditional_mi_matches_naive(seed):
    rng = np.random.default_rng(seed)
    g, obs, sel = random_small_graph(rng, 5, p_selection=0.0)
    if len(obs) < 3:
        return
    x, y, z = obs[0], obs[1], obs[2]
    got = mutual_information(joint_distribution(g), x, y, conditioning=[z])
    assert abs(got - naive_mi(g, [x], [y], zs=[z])) < 1e-12


@settings(max_examples=40, deadline=None)
@given(p1=st.floats(0.05, 0.95), p2=st.floats(0.05, 0.95))
def test_independent_roots_stay_independent(p1, p2):
    g = build_graph([("A", BIN), ("B", BIN)], [], {"A": {"": [1 - p1, p1]}, "B": {"": [1 - p2, p2]}})
    assert mutual_information(joint_distribution(g), "A", "B") == 0.0


# ---------------------------------------------------------------- selection examples


def test_berkson_against_hand_oracle():
    d = joint_distribution(berkson_graph())
    marg, cond = berkson_hand()
    got_marg = mutual_information(d, "X1", "X2")
    got_cond = mutual_information(d, "X1", "X2", {"S4": 1})
    assert got_marg < 1e-12 and marg == 0.0
    assert got_cond > 0.01
    assert abs(got_cond - cond) < 1e-12


def test_selection_on_single_cause_or_effect_keeps_diseases_apart():
    d = joint_distribution(berkson_graph())
    for s in ("S1", "S2"):
        assert mutual_information(d, "X1", "X2", {s: 1}) < 1e-12


def test_tuned_selection_hides_a_causal_link():
    d = joint_distribution(berkson_graph())
    assert mutual_information(d, "X2", "Y2") > 0.01
    assert mutual_information(d, "X2", "Y2", {"S3": 1}) < 1e-12


def test_selection_on_both_diseases_couples_them():
    d = joint_distribution(berkson_graph())
    assert mutual_information(d, "X1", "X2", {"S5": 1}) > 1e-3


# ---------------------------------------------------------------- theorem


def test_fixture_graph_verified():
    rep = verify_theorem1(theorem_fixture_graph(), REASONING_ROLES, 1e-9)
    assert rep.status == "verified"
    assert rep.premises_hold and rep.conclusion_holds
    assert rep.conclusion.mutual_information < 1e-9


def test_historical_selection_alone_breaks_premises():
    rep = verify_theorem1(theorem_fixture_graph(False), REASONING_ROLES, 1e-9)
    assert rep.status == "premises unsatisfied"
    assert not rep.conclusion_holds
    assert rep.conclusion.mutual_information > 1e-3


def test_xor_counterexample():
    rep = verify_theorem1(xor_counterexample_graph(), REASONING_ROLES, 1e-9)
    assert rep.premises_hold
    assert rep.status == "counterexample"
    # hand value: A and Y share the bit fact AND salient; I = H(Y) - H(Y|A)
    h = lambda ps: -sum(p * math.log(p) for p in ps if p > 0)  # noqa: E731
    expected = h([0.75, 0.25]) - 0.5 * h([0.5, 0.5])
    assert rep.conclusion.mutual_information == pytest.approx(expected, abs=1e-12)
    assert rep.joint_parents.mutual_information == pytest.approx(math.log(2), abs=1e-12)


def test_disconnected_a_is_trivially_independent():
    rep = verify_theorem1(disconnected_graph(), REASONING_ROLES, 1e-9)
    assert rep.status == "verified"


def test_role_validation():
    g = theorem_fixture_graph()
    with pytest.raises(RoleUnmapped):
        verify_theorem1(g, {k: v for k, v in REASONING_ROLES.items() if k != "PPC"})
    swapped = dict(REASONING_ROLES, Y="fact", fact="Y")
    with pytest.raises(TopologyMismatch):
        verify_theorem1(g, swapped)


@pytest.mark.parametrize("seed", range(10))
def test_constructed_ppc_makes_a_jointly_independent(seed):
    g = random_reasoning_graph(np.random.default_rng(seed))
    rep = verify_theorem1(g, REASONING_ROLES, 1e-9)
    assert rep.status == "verified"
    assert rep.joint_parents.mutual_information < 1e-12


def test_construct_ppc_target_marginal():
    g = random_reasoning_graph(np.random.default_rng(3), constructed_ppc=False)
    g = g.with_selection("PPC", construct_ppc(g, REASONING_ROLES, target=np.array([0.5, 0.5])))
    post = condition(joint_distribution(g), [("S", 1), ("PPC", 1)])
    assert post.marginal(["A"]).table == pytest.approx([0.5, 0.5], abs=1e-12)


def test_search_is_seeded_and_monotone():
    g = theorem_fixture_graph(False)
    a = search_ppc(g, REASONING_ROLES, trials=15, seed=7)
    b = search_ppc(g, REASONING_ROLES, trials=15, seed=7)
    assert a.table == b.table and a.trace == b.trace
    assert all(x >= y for x, y in zip(a.best_trace, a.best_trace[1:]))
    assert a.best_trace[-1] == min(a.trace)
