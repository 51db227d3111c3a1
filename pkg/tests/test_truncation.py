import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermoquench import exact
from thermoquench.containers import DensityMatrix, Source
from thermoquench.errors import ConsistencyError
from thermoquench.model import BasisState, ModelParams
from thermoquench.truncation import (magnitude_order, minimal_count_dense, sweep_nw, truncate, weight_of,
                                     write_sweep_csv)


@pytest.fixture(scope="module")
def rho6():
    return exact.thermal_density_matrix(ModelParams(6, g=0.8, h_s=1 / 6), 1.0)


def test_keep_everything(rho6):
    t = truncate(rho6, cutoff=0.0)
    assert t.weight == 1.0 and t.N_w == rho6.n_elements
    np.testing.assert_allclose(t.rho_w.to_dense(), rho6.to_dense(), atol=1e-15)
    assert t.rho_w.source is Source.TRUNCATED


def test_low_temperature_single_element(l2_oracle):
    rho = exact.thermal_density_matrix(l2_oracle, 50.0)
    t = truncate(rho, count=1)
    k = BasisState.from_string("01").bits
    assert t.N_w == 1 and t.rho_w.entry(k, k) == 1.0
    assert t.weight == pytest.approx(1.0, abs=1e-12)


def test_infinite_temperature_diagonal():
    rho = exact.thermal_density_matrix(ModelParams(4, g=0.5, h_s=0.25), 0.0)
    t = truncate(rho, count=16)
    assert t.N_w == 16 and t.weight == pytest.approx(1.0)


def test_weight_target_and_cutoff_agree(rho6):
    t = truncate(rho6, weight=0.95)
    assert t.weight >= 0.95
    assert np.all(np.abs(rho6.values[magnitude_order(rho6)[len(t.rho_w):]]) <= t.cutoff)
    shorter = truncate(rho6, count=t.N_w - 2)
    assert shorter.weight < 0.95


def test_cutoff_partition(rho6):
    eps = 1e-3
    t = truncate(rho6, cutoff=eps)
    retained = set(zip(t.rho_w.rows, t.rho_w.cols))
    for m, n, v in zip(rho6.rows, rho6.cols, rho6.values):
        assert ((m, n) in retained) == (abs(v) > eps)


def test_trace_renormalized(rho6):
    t = truncate(rho6, weight=0.9)
    assert t.rho_w.trace == pytest.approx(1.0, abs=1e-12)


def test_weight_is_pre_renormalization(rho6):
    t = truncate(rho6, count=20)
    top = magnitude_order(rho6)[:len(t.rho_w)]
    kept = DensityMatrix(6, rho6.rows[top], rho6.cols[top], rho6.values[top])
    assert t.weight == pytest.approx(weight_of(kept, rho6), abs=1e-14)


def test_unreachable_weight(rho6):
    with pytest.raises(ValueError):
        truncate(rho6, weight=1.01)


def test_exactly_one_target(rho6):
    with pytest.raises(ValueError):
        truncate(rho6, weight=0.9, count=4)


def test_empty_rho():
    with pytest.raises(ValueError):
        truncate(DensityMatrix(2, [], [], []), count=1)


def test_degenerate_trace():
    rho = DensityMatrix(2, [0, 1], [1, 1], [0.5, 0.1])
    with pytest.raises(ConsistencyError):
        truncate(rho, count=2)


def test_weight_of_examples(rho6):
    assert weight_of(rho6, rho6) == pytest.approx(1.0)
    assert weight_of(DensityMatrix(6, [], [], []), rho6) == 0.0
    inf = exact.thermal_density_matrix(ModelParams(4), 0.0)
    sub = DensityMatrix(4, inf.rows[:5], inf.cols[:5], inf.values[:5])
    assert weight_of(sub, inf) == pytest.approx(np.sqrt(5 / 16))
    with pytest.raises(ValueError):
        weight_of(sub, DensityMatrix(4, [], [], []))


def test_tie_break_by_key():
    rho = DensityMatrix(2, [0, 1, 2, 3], [0, 1, 2, 3], [0.25] * 4)
    t = truncate(rho, count=2)
    assert list(t.rho_w.rows) == [0, 1]


def test_manifest_and_index_set(rho6, tmp_path):
    t = truncate(rho6, weight=0.9)
    m, n = t.index_set
    assert len(m) == t.N_w
    assert set(zip(m.tolist(), n.tolist())) == {(b, a) for a, b in zip(m.tolist(), n.tolist())}
    mags = np.abs([t.rho_w.entry(a, b) for a, b in zip(m, n)])
    assert np.all(np.diff(mags) <= 1e-15)
    t.write_manifest(tmp_path / "t.json")
    man = t.manifest()
    assert man["N_w"] == t.N_w and len(man["retained"]) == len(t.rho_w)


def test_greedy_is_minimal_bruteforce():
    rho = exact.thermal_density_matrix(ModelParams(2, g=0.6, h_s=0.5), 0.8)
    full = rho.frobenius_sq()
    mult, vals = rho.multiplicity, rho.values
    for target in (0.5, 0.8, 0.9, 0.99):
        greedy = truncate(rho, weight=target).N_w
        best = min(sum(mult[list(s)]) for r in range(1, len(vals) + 1)
                   for s in itertools.combinations(range(len(vals)), r)
                   if np.sqrt(np.sum(mult[list(s)] * vals[list(s)] ** 2) / full) >= target)
        assert greedy == best


@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_monotone_in_target(a, b):
    rho = exact.thermal_density_matrix(ModelParams(4, g=0.7, h_s=0.25), 1.0)
    lo, hi = sorted((a, b))
    assert truncate(rho, weight=lo).N_w <= truncate(rho, weight=hi).N_w


@given(st.integers(1, 256))
def test_count_never_exceeds(n):
    rho = exact.thermal_density_matrix(ModelParams(4, g=1.2, h_s=0.25), 0.5)
    try:
        t = truncate(rho, count=n)
    except ConsistencyError:
        return
    assert t.N_w <= n and t.N_w <= 4 ** 4 and 0 < t.weight <= 1


def test_dense_count_matches_sparse(rho6):
    n, w = minimal_count_dense(rho6.to_dense(), 0.93)
    t = truncate(rho6, weight=0.93)
    assert n == t.N_w and w == pytest.approx(t.weight)


def test_sweep_trends_and_csv(tmp_path):
    grid = [(6, 2.0, g, 0.0, b) for g in (0.5, 1.5) for b in ("z", "x")] + [(6, 0.0, 0.5, 0.0, "z"),
                                                                         (14, 1.0, 0.5, 0.0, "z")]
    rows = sweep_nw(grid, 0.93)
    nw = {(r["g0"], r["basis"]): r["N_w"] for r in rows[:4]}
    assert nw[(1.5, "z")] > nw[(0.5, "z")]
    assert nw[(0.5, "x")] > nw[(1.5, "x")]
    assert rows[4]["N_w"] <= 2 ** 6
    assert rows[5]["N_w"] is None
    write_sweep_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "L,beta,g0,h0,basis,w_target,N_w,achieved_w" and len(lines) == 7
