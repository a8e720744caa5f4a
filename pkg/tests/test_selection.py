import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmiris.encoding import FilterBank, default_bank, encode, gabor_kernel
from pmiris.errors import EmptyDataset, InsufficientPairs, InvalidConfig
from pmiris.evaluation import build_scores, eer
from pmiris.imaging import Kernel2D
from pmiris.selection import EERObjective, prune_degenerate, sfs_sbs
from pmiris.synthdata import SynthConfig, generate
from pmiris.normalization import align


def _k(label, provenance="gabor", seed=0, shape=(3, 5)):
    w = np.random.default_rng(seed).standard_normal(shape)
    return Kernel2D(w - w.mean(), provenance, label)


class TableObjective:
    """Objective defined by a lookup on the set of labels in the bank."""

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def __call__(self, bank):
        self.calls += 1
        return self.table[frozenset(bank.labels)]


def oracle_walk(initial, candidates, gabor, value, min_bank=2):
    """Greedy add/remove walk over a precomputed subset table, on label sets only."""
    bank = list(initial)
    unused = list(candidates)
    cur = value[frozenset(bank)]
    trace = []
    while unused:
        trials = [value[frozenset(bank + [c])] for c in unused]
        i = min(range(len(trials)), key=lambda j: (trials[j], j))
        if not trials[i] < cur:
            break
        bank.append(unused.pop(i))
        cur = trials[i]
        trace.append(("add", bank[-1], cur))
        removable = [x for x in bank if x in gabor]
        if len(bank) <= min_bank or not removable:
            continue
        trials = [value[frozenset(set(bank) - {r})] for r in removable]
        i = min(range(len(trials)), key=lambda j: (trials[j], j))
        if trials[i] <= cur:
            bank.remove(removable[i])
            cur = trials[i]
            trace.append(("remove", removable[i], cur))
    trace.append(("stop", None, cur))
    return bank, trace


def _all_subsets(labels):
    return [frozenset(c) for n in range(len(labels) + 1) for c in itertools.combinations(labels, n)]


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 4), st.integers(1, 4))
def test_walk_matches_table_oracle(seed, n_init, n_cand):
    r = np.random.default_rng(seed)
    init = [_k(f"g{i}", seed=i) for i in range(n_init)]
    cand = [_k(f"c{i}", "learned", seed=10 + i) for i in range(n_cand)]
    labels = [k.label for k in init + cand]
    # coarse values so ties occur and exercise the tie rules
    table = {s: float(r.integers(0, 6)) / 10 for s in _all_subsets(labels)}
    bank, trace = sfs_sbs(FilterBank(tuple(init)), cand, TableObjective(table))
    o_bank, o_trace = oracle_walk([k.label for k in init], [k.label for k in cand],
                                  {k.label for k in init}, table)
    assert list(bank.labels) == o_bank
    assert [(t["action"], t["filter_label"], t["eer"]) for t in trace] == o_trace
    values = [t["eer"] for t in trace]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert [t["step"] for t in trace] == list(range(1, len(trace) + 1))
    assert len(bank) >= min(2, len(bank))


def test_min_bank_floor():
    init = [_k("g0"), _k("g1", seed=1)]
    cand = [_k("c0", "learned", seed=5)]
    table = {s: (0.0 if len(s) < 3 else 0.1) for s in _all_subsets(["g0", "g1", "c0"])}
    table[frozenset({"g0", "g1"})] = 0.3
    bank, trace = sfs_sbs(FilterBank(tuple(init)), cand, TableObjective(table))
    # 3 filters allow one removal down to the floor of 2
    assert len(bank) == 2 and trace[1]["action"] == "remove"


def test_no_candidates_and_clash():
    init = FilterBank((_k("g0"), _k("g1", seed=1)))
    table = {frozenset({"g0", "g1"}): 0.2}
    bank, trace = sfs_sbs(init, [], TableObjective(table))
    assert bank == init and trace == [{"step": 1, "action": "stop", "filter_label": None, "eer": 0.2}]
    with pytest.raises(InvalidConfig):
        sfs_sbs(init, [_k("g0")], TableObjective(table))


def test_learned_filters_never_removed():
    init = [_k("g0"), _k("g1", seed=1)]
    cand = [_k("c0", "learned", seed=3), _k("c1", "learned", seed=4)]
    labels = ["g0", "g1", "c0", "c1"]
    table = {s: 0.5 - 0.1 * len(s & {"c0", "c1"}) + 0.01 * len(s & {"g0", "g1"})
             for s in _all_subsets(labels)}
    bank, _ = sfs_sbs(FilterBank(tuple(init)), cand, TableObjective(table))
    assert {"c0", "c1"} <= set(bank.labels)
    assert not {"g0", "g1"} & set(bank.labels) or len(bank) == 2


# --- real objective -------------------------------------------------------


@pytest.fixture(scope="module")
def tuning():
    cfg = SynthConfig(n_subjects=4, captures_per_eye=(5, 30, 200), seed=3)
    return [align(c.polar, c.corners) for c in generate(cfg)]


def test_objective_equals_full_pipeline(tuning):
    bank = FilterBank(default_bank().kernels[:2])
    obj = EERObjective(tuning, 1e9)
    s = build_scores([encode(p, bank) for p in tuning])
    assert obj(bank) == eer(s)[0]
    got = obj.scores(bank)
    assert np.array_equal(np.sort(got.genuine), np.sort(s.genuine))
    assert np.array_equal(np.sort(got.impostor), np.sort(s.impostor))


def test_zero_kernel_never_added(tuning):
    zero = Kernel2D(np.zeros((9, 15)), "learned", "zero")
    init = FilterBank(default_bank().kernels[:3])
    bank, trace = sfs_sbs(init, [zero], EERObjective(tuning, 1e9))
    assert "zero" not in bank.labels and [t["action"] for t in trace] == ["stop"]


def test_objective_needs_both_pair_kinds(tuning):
    with pytest.raises(InsufficientPairs):
        EERObjective(tuning[:1] + tuning[3:4], 1e9)


def test_prune_all_negative_kernel(tuning):
    neg = Kernel2D(-np.ones((9, 15)), "learned", "negative")
    good = gabor_kernel(9, 15, 8, label="ok", provenance="learned")
    kept = prune_degenerate([good, neg], tuning)
    assert [k.label for k in kept] == ["ok"]


def test_prune_validation(tuning):
    with pytest.raises(InvalidConfig):
        prune_degenerate([], tuning, 0.9, 0.1)
    with pytest.raises(EmptyDataset):
        prune_degenerate([_k("a")], [])
