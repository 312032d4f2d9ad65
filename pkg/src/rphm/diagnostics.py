"""Fault/test CTBNs derived from a D-matrix and reliability data.

Faults become parentless binary vertices parameterized by failure and
repair rates.  Every test becomes a binary vertex whose parents are the
faults it detects.  Test matrices turn pass/fail probabilities into rates
with ``q(s -> s') = 1 / P(T = s | faults)``, which makes the stationary
fail probability of the test equal to ``P(T = 1 | faults)``.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ctbn import Cim, CtbnModel, Variable, parent_assignments, two_state_im, validate_model
from .errors import AssemblyError, ModelError, ParameterError, ParseError

log = logging.getLogger(__name__)

FAULT_STATES = ("ok", "failed")
TEST_STATES = ("pass", "fail")
PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class DMatrix:
    fault_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    d: np.ndarray
    warnings: tuple[str, ...] = ()

    @property
    def shape(self):
        return self.d.shape

    def parents_of(self, test_id: str) -> list[str]:
        j = self.test_ids.index(test_id)
        return [f for i, f in enumerate(self.fault_ids) if self.d[i, j]]

    def signature(self, fault_id: str) -> np.ndarray:
        return self.d[self.fault_ids.index(fault_id)]


def make_dmatrix(fault_ids: Sequence[str], test_ids: Sequence[str], d) -> DMatrix:
    d = np.asarray(d, dtype=np.int8).reshape(len(fault_ids), len(test_ids))
    for ids, what in ((fault_ids, "fault"), (test_ids, "test")):
        dup = sorted({x for x in ids if list(ids).count(x) > 1})
        if dup:
            raise ParseError(f"duplicate {what} ids: {dup}")
    if set(fault_ids) & set(test_ids):
        raise ParseError(f"ids used for both faults and tests: {sorted(set(fault_ids) & set(test_ids))}")
    warnings = [f"isolated fault {f}: detected by no test"
                for f, row in zip(fault_ids, d) if not row.any()]
    warnings += [f"isolated test {t}: detects no fault"
                 for t, col in zip(test_ids, d.T) if not col.any()]
    for w in warnings:
        log.warning(w)
    return DMatrix(tuple(fault_ids), tuple(test_ids), d, tuple(warnings))


def parse_dmatrix(text: str) -> DMatrix:
    """Parse a D-matrix CSV: header of test ids, one row per fault."""
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty D-matrix file")
    header = [c.strip() for c in rows[0]]
    test_ids = header[1:]
    fault_ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        fid = row[0].strip()
        values = []
        for tid, cell in zip(test_ids, row[1:]):
            cell = cell.strip()
            if cell not in ("0", "1"):
                raise ParseError(f"line {lineno}: non-binary entry at row {fid}, col {tid}: {cell!r}")
            values.append(int(cell))
        fault_ids.append(fid)
        data.append(values)
    return make_dmatrix(fault_ids, test_ids, np.array(data, dtype=np.int8).reshape(len(fault_ids), len(test_ids)))


def dmatrix_to_csv(dm: DMatrix) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["f", *dm.test_ids])
    for fid, row in zip(dm.fault_ids, dm.d):
        w.writerow([fid, *[int(x) for x in row]])
    return out.getvalue()


@dataclass(frozen=True)
class FaultReliability:
    id: str
    mtbf: float
    mttr: float = 0.0
    repair_cost: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not (self.mtbf > 0 and math.isfinite(self.mtbf)):
            raise ParameterError(f"{self.id}: MTBF must be positive, got {self.mtbf}")
        if not (self.mttr >= 0 and math.isfinite(self.mttr)):
            raise ParameterError(f"{self.id}: MTTR must be >= 0, got {self.mttr}")
        if not self.repair_cost >= 0:
            raise ParameterError(f"{self.id}: repair cost must be >= 0")

    @property
    def failure_rate(self) -> float:
        return 1.0 / self.mtbf

    @property
    def repair_rate(self) -> float:
        return 1.0 / self.mttr if self.mttr > 0 else 0.0


def parse_reliability(text: str) -> list[FaultReliability]:
    """Reliability CSV with header ``id,name,mtbf,mttr,repair_cost``."""
    reader = csv.DictReader(io.StringIO(text))
    need = {"id", "mtbf", "mttr"}
    if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
        raise ParseError(f"reliability CSV needs columns {sorted(need)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        row = {k.strip(): (v or "").strip() for k, v in row.items()}
        try:
            out.append(FaultReliability(row["id"], float(row["mtbf"]), float(row["mttr"]),
                                        float(row.get("repair_cost") or 0.0), row.get("name", "")))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class TestParams:
    id: str
    fa: float
    nd: float
    per_pair: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        probs = [self.fa, self.nd] + [x for pair in self.per_pair.values() for x in pair]
        if not all(0.0 <= p <= 1.0 for p in probs):
            raise ParameterError(f"test {self.id}: probabilities must lie in [0, 1]")

    def pair(self, fault_id: str) -> tuple[float, float]:
        """(FA_ij, ND_ij) for one parent; zero when unspecified."""
        return self.per_pair.get(fault_id, (0.0, 0.0))


def test_params_from_dict(d: Mapping) -> TestParams:
    try:
        pairs = {f: (float(v.get("fa", 0.0)), float(v.get("nd", 0.0)))
                 for f, v in (d.get("per_pair") or {}).items()}
        return TestParams(d["id"], float(d["fa"]), float(d["nd"]), pairs)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed test parameters: {exc!r}") from None


def line_clear_probability(p: TestParams, parent_states: Mapping[str, int]) -> float:
    """P(p_i = 1 | F): product of (1 - FA_ij) over healthy and ND_ij over failed parents."""
    prob = 1.0
    for fid in sorted(parent_states):
        fa, nd = p.pair(fid)
        prob *= nd if parent_states[fid] else (1.0 - fa)
    return prob


def test_pass_probability(p: TestParams, parent_states: Mapping[str, int]) -> float:
    """P(T = 0 | F) = ND * P(p=1 | F) + (1 - FA) * P(p=0 | F), literally.

    Note the convention: with zero per-pair parameters and no failed
    parent, ``P(p=1) = 1`` and the result is ``ND``.  The rate construction
    in :func:`test_cim` uses :func:`test_outcome_probabilities`, which
    pairs ``1 - FA`` with the all-clear line instead.
    """
    clear = line_clear_probability(p, parent_states)
    return p.nd * clear + (1.0 - p.fa) * (1.0 - clear)


def test_outcome_probabilities(p: TestParams, parent_states: Mapping[str, int]) -> tuple[float, float]:
    """(P(T=pass), P(T=fail)) with the false-alarm branch on the all-clear line.

    Both are computed directly (not as complements) so that zero per-pair
    parameters reproduce ``1 - FA``/``FA`` and ``ND``/``1 - ND`` exactly.
    """
    clear = line_clear_probability(p, parent_states)
    flagged = 1.0 - clear
    p_pass = (1.0 - p.fa) * clear + p.nd * flagged
    p_fail = p.fa * clear + (1.0 - p.nd) * flagged
    return p_pass, p_fail


def _rate_matrix(p_pass: float, p_fail: float) -> np.ndarray:
    return two_state_im(1.0 / p_pass, 1.0 / p_fail)


def test_cim(p: TestParams, parents: Sequence[str], mode: str = "simplified") -> Cim:
    """CIM of a test vertex over binary fault parents."""
    parents = tuple(sorted(parents))
    assignments = list(parent_assignments([2] * len(parents)))
    matrices = {}
    if mode == "simplified":
        if not (0.0 < p.fa < 1.0 and 0.0 < p.nd < 1.0):
            raise ParameterError(f"test {p.id}: simplified mode needs 0 < FA, ND < 1 "
                                 "(use per_pair mode, which clamps probabilities)")
        clear = two_state_im(1.0 / (1.0 - p.fa), 1.0 / p.fa)
        fault = two_state_im(1.0 / p.nd, 1.0 / (1.0 - p.nd))
        for a in assignments:
            matrices[a] = fault if any(a) else clear
    elif mode == "per_pair":
        unknown = set(p.per_pair) - set(parents)
        if unknown:
            raise ParameterError(f"test {p.id}: per-pair entries for non-parents {sorted(unknown)}")
        for a in assignments:
            p_pass, p_fail = test_outcome_probabilities(p, dict(zip(parents, a)))
            p_pass = min(max(p_pass, PROB_CLAMP), 1.0 - PROB_CLAMP)
            p_fail = min(max(p_fail, PROB_CLAMP), 1.0 - PROB_CLAMP)
            matrices[a] = _rate_matrix(p_pass, p_fail)
    else:
        raise ParameterError(f"unknown test mode {mode!r}")
    return Cim(p.id, parents, matrices)


def fault_cim(r: FaultReliability) -> Cim:
    """Parentless CIM ``[[-1/MTBF, 1/MTBF], [1/MTTR, -1/MTTR]]``; MTTR 0 means no repair."""
    return Cim(r.id, (), {(): two_state_im(r.failure_rate, r.repair_rate)})


def derive_dmatrix_structure(dm: DMatrix) -> CtbnModel:
    """Bipartite skeleton: one vertex per fault and test, an edge per 1 entry."""
    variables = [Variable(f, FAULT_STATES, "fault") for f in dm.fault_ids]
    variables += [Variable(t, TEST_STATES, "test") for t in dm.test_ids]
    edges = {(dm.fault_ids[i], dm.test_ids[j]) for i, j in zip(*np.nonzero(dm.d))}
    return CtbnModel(variables, edges, {}, {})


def nominal_initial(size: int) -> np.ndarray:
    init = np.zeros(size)
    init[0] = 1.0
    return init


def build_diagnostic_model(dm: DMatrix, reliability: Iterable[FaultReliability],
                           tests: Iterable[TestParams], mode: str = "simplified") -> CtbnModel:
    """Structure plus fault and test parameters, started all non-failed."""
    if not dm.fault_ids:
        raise AssemblyError("no faults")
    rel = {r.id: r for r in reliability}
    tps = {t.id: t for t in tests}
    missing = [f for f in dm.fault_ids if f not in rel] + [t for t in dm.test_ids if t not in tps]
    if missing:
        raise AssemblyError(f"missing parameter records for {missing}")
    skeleton = derive_dmatrix_structure(dm)
    cims = {f: fault_cim(rel[f]) for f in dm.fault_ids}
    cims.update({t: test_cim(tps[t], dm.parents_of(t), mode) for t in dm.test_ids})
    initial = {v.id: nominal_initial(v.size) for v in skeleton.variables}
    model = skeleton.replace(cims=cims, initial=initial)
    violations = validate_model(model)
    if violations:
        raise ModelError(violations)
    return model


# keep pytest from collecting the domain functions that happen to start with "test_"
for _f in (test_params_from_dict, test_pass_probability, test_outcome_probabilities, test_cim):
    _f.__test__ = False
del _f
