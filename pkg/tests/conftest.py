import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rphm.ctbn import Cim, CtbnModel, Variable, two_state_im
from rphm.vehicle import vehicle_model

settings.register_profile("rphm", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rphm")


def fault_model(rates, ids=None):
    """Independent two-state faults started non-failed; ``rates`` is [(lam, mu), ...]."""
    ids = ids or [f"F{i + 1}" for i in range(len(rates))]
    variables = [Variable(i, ("ok", "failed"), "fault") for i in ids]
    cims = {i: Cim(i, (), {(): two_state_im(lam, mu)}) for i, (lam, mu) in zip(ids, rates)}
    initial = {i: np.array([1.0, 0.0]) for i in ids}
    return CtbnModel(variables, set(), cims, initial)


def two_state_fail_probability(lam, mu, t):
    """P(failed at t | ok at 0) for a two-state chain."""
    s = lam + mu
    return lam / s * (1.0 - np.exp(-s * t)) if s > 0 else 0.0


@pytest.fixture(scope="session")
def vehicle():
    return vehicle_model()


def random_fault_tree(rng, n_faults, n_gates, duplicate_rate=0.3):
    """Random AND/OR DAG over ``n_faults`` faults, with duplicate leaf records.

    Gate ``G{k}`` draws children from the faults and earlier gates; some
    fault references go through extra leaf records naming the same fault,
    and some children repeat within a gate.  The last gate is the top.
    """
    from rphm.faulttree import Node, make_fault_tree

    faults = [f"F{i}" for i in range(n_faults)]
    nodes = {f: Node("fault") for f in faults}
    copies = 0
    for k in range(n_gates):
        pool = faults + [f"G{j}" for j in range(k)]
        size = int(rng.integers(1, min(4, len(pool)) + 1))
        children = [pool[i] for i in rng.choice(len(pool), size=size, replace=False)]
        if rng.random() < duplicate_rate:
            children.append(children[0])
        out = []
        for c in children:
            if c in nodes and nodes[c].kind == "fault" and rng.random() < duplicate_rate:
                copies += 1
                rec = f"{c}_copy{copies}"
                nodes[rec] = Node("fault", fault=c)
                c = rec
            out.append(c)
        op = "and" if rng.random() < 0.5 else "or"
        nodes[f"G{k}"] = Node("gate", op, tuple(out))
    return make_fault_tree(nodes, f"G{n_gates - 1}")


def frozen_parent_model(gate_op, params, assignment):
    """A gate whose binary parents never move, started in state 0."""
    from rphm.diagnostics import FaultReliability
    from rphm.faulttree import Node, build_hazard_model, make_fault_tree

    n = len(assignment)
    ft_nodes = {f"P{i}": Node("fault") for i in range(n)}
    ft_nodes["X"] = Node("gate", gate_op, tuple(f"P{i}" for i in range(n)))
    ft = make_fault_tree(ft_nodes, "X")
    rel = [FaultReliability(f"P{i}", 1e300, 0.0) for i in range(n)]
    model = build_hazard_model(ft, rel, [params])
    initial = dict(model.initial)
    cims = dict(model.cims)
    for i, s in enumerate(assignment):
        initial[f"P{i}"] = np.array([1.0 - s, float(s)])
        cims[f"P{i}"] = Cim(f"P{i}", (), {(): np.zeros((2, 2))})
    return model.replace(initial=initial, cims=cims)


# --- acceptance report ----------------------------------------------------

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and call.excinfo is None:
        return
    number, title = marker.args
    outcomes = _CRITERIA.setdefault(number, (title, []))[1]
    outcomes.append("FAIL" if call.excinfo is not None else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        status = "FAIL" if "FAIL" in outcomes else "PASS"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
