import os
import tempfile
import shutil
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvebayes.tables import ContingencyTable, load_fixture, \
    expected_natural, expected_reference, get_expected, AmseInputs, \
    amse_natural, amse_reference, reference_advantage, \
    reference_advantage_threshold
from pvebayes.utils import DataError


def test_marginals_and_estimators():
    t = ContingencyTable([[2, 8], [3, 12]])
    assert t.total == 25
    assert_array_equal(t.row_totals, [10, 15])
    assert_array_equal(t.col_totals, [5, 20])
    assert t.reference_row == 1
    assert t.reference_col == 1
    assert_allclose(expected_natural(t).values[0, 0], 2.0)
    assert_allclose(expected_reference(t).values[0, 0], 2.0)
    assert get_expected(t, "natural").kind == "natural"
    with pytest.raises(ValueError):
        get_expected(t, "median")


def test_reference_cells():
    prng = np.random.RandomState(25)
    t = ContingencyTable(prng.randint(1, 50, size=(5, 4)))
    Et = expected_reference(t).values
    c = t.counts
    # the estimator reproduces the reference row and column
    assert_allclose(Et[:, -1], c[:, -1])
    assert_allclose(Et[-1, :], c[-1, :])
    En = expected_natural(t).values
    assert_allclose(En.sum(), t.total)
    assert_allclose(En.sum(axis=1), t.row_totals)
    assert not t.non_reference_mask[-1, :].any()
    assert t.non_reference_mask[:-1, :-1].all()


def test_zero_corner():
    t = ContingencyTable([[2, 8], [3, 0]])
    with pytest.raises(DataError):
        expected_reference(t)
    # the natural estimator is still available
    assert_allclose(expected_natural(t).values[0, 0], 5*10/13)


@pytest.mark.parametrize("counts", [
    [1, 2, 3],
    [[1, 2, 3]],
    [[1, -2], [3, 4]],
    [[1, 2.5], [3, 4]],
    [[1, np.nan], [3, 4]],
    [[0, 0], [0, 0]],
    [[0, 1], [0, 4]],
])
def test_invalid_tables(counts):
    with pytest.raises(DataError):
        ContingencyTable(counts)


def test_duplicate_labels():
    with pytest.raises(DataError):
        ContingencyTable([[1, 2], [3, 4]], row_labels=["a", "a"])


def test_read_write():

    tmpdir = tempfile.mkdtemp()
    curdir = os.getcwd()
    os.chdir(tmpdir)

    t = ContingencyTable([[5, 1, 7], [2, 9, 4], [11, 3, 60]],
                         row_labels=["Myalgia", "Other AE", "Rash"],
                         col_labels=["DrugA", "Other", "DrugB"])
    t.write_file("test_table.csv", overwrite=True)
    with pytest.raises(IOError):
        t.write_file("test_table.csv")

    t2 = ContingencyTable.from_file("test_table.csv",
                                    reference_row="Other AE",
                                    reference_col="Other")
    assert t2.row_labels == ["Myalgia", "Rash", "Other AE"]
    assert t2.col_labels == ["DrugA", "DrugB", "Other"]
    assert_array_equal(t2.counts, [[5, 7, 1], [11, 60, 3], [2, 4, 9]])
    assert t2.total == t.total

    with pytest.raises(DataError):
        t.move_reference(reference_row="Nausea")

    with open("bad_table.csv", "w") as f:
        f.write("AE,DrugA,Other\nMyalgia,3,x\nOther,4,5\n")
    with pytest.raises(DataError):
        ContingencyTable.from_file("bad_table.csv")
    with pytest.raises(FileNotFoundError):
        ContingencyTable.from_file("missing.csv")

    os.chdir(curdir)
    shutil.rmtree(tmpdir)


def test_statin_fixtures():
    t46 = load_fixture("statin46")
    assert t46.shape == (47, 7)
    assert t46.total == 63976610
    assert t46.row_labels[-1] == "Other Pt"
    assert t46.col_labels[-1] == "Other"
    t42 = load_fixture("statin42")
    assert t42.shape == (43, 7)
    assert t42.total == 63976425
    i = t46.row_labels.index("Rhabdomyolysis")
    j = t46.col_labels.index("Lovastatin")
    assert t46.counts[i, j] == 44
    assert_allclose(expected_reference(t46).values[i, j],
                    31707*2845/61724222, rtol=1.0e-12)
    # the natural estimator is inflated by the strong signals in the row
    assert expected_natural(t46).values[i, j] > \
        expected_reference(t46).values[i, j]
    with pytest.raises(KeyError):
        load_fixture("statin99")


def test_amse_null_closed_forms():
    inputs = AmseInputs.from_table(load_fixture("statin42"))
    p, q, N = inputs.p_row, inputs.p_col, inputs.grand_total
    i, j = 3, 2
    assert_allclose(amse_natural(inputs, i, j),
                    (1.0/p[i] + 1.0/q[j] - 2.0)/N, rtol=1.0e-10)
    assert_allclose(amse_reference(inputs, i, j),
                    (1.0/(p[-1]*q[-1]) + 1.0/(p[i]*q[-1]) +
                     1.0/(p[-1]*q[j]) - 1.0)/N, rtol=1.0e-10)


def _monte_carlo_sq_errors(inputs, cells, M, prng):
    probs = inputs.cell_probabilities().ravel()
    probs /= probs.sum()
    E_null = inputs.null_expected()
    shape = inputs.lambda_true.shape
    sq_nat = np.zeros((M, len(cells)))
    sq_ref = np.zeros((M, len(cells)))
    for m in range(M):
        t = ContingencyTable(prng.multinomial(inputs.grand_total,
                                              probs).reshape(shape))
        En = expected_natural(t).values
        Er = expected_reference(t).values
        for k, (i, j) in enumerate(cells):
            sq_nat[m, k] = (En[i, j]/E_null[i, j] - 1.0)**2
            sq_ref[m, k] = (Er[i, j]/E_null[i, j] - 1.0)**2
    return sq_nat, sq_ref


@pytest.mark.parametrize("signals", [
    {},
    {(0, 0): 4.0},
    {(0, 0): 10.0},
    {(0, 0): 2.0, (1, 1): 2.0, (2, 2): 2.0, (3, 3): 1.2},
])
def test_amse_monte_carlo(signals):
    marginals = load_fixture("statin42")
    lam = np.ones(marginals.shape)
    for cell, s in signals.items():
        lam[cell] = s
    inputs = AmseInputs.from_table(marginals, lam)
    cells = [(0, 0), (0, 1), (4, 3)]
    M = 2000
    sq_nat, sq_ref = _monte_carlo_sq_errors(inputs, cells, M,
                                            np.random.RandomState(42))
    for k, (i, j) in enumerate(cells):
        for sq, amse in [(sq_nat[:, k], amse_natural(inputs, i, j)),
                         (sq_ref[:, k], amse_reference(inputs, i, j))]:
            se = sq.std()/np.sqrt(M)
            assert abs(sq.mean() - amse) < 4.0*se + 1.0e-3*amse


def test_reference_advantage():
    marginals = load_fixture("statin42")

    def inputs_at(s):
        lam = np.ones(marginals.shape)
        lam[0, 0] = s
        return AmseInputs.from_table(marginals, lam)

    n_holds = 0
    for s in range(1, 11):
        inputs = inputs_at(float(s))
        res = reference_advantage(inputs, 0, 0)
        assert res.A < res.B
        if res.holds:
            n_holds += 1
            assert amse_natural(inputs, 0, 0) > amse_reference(inputs, 0, 0)
    assert n_holds > 0
    assert not reference_advantage(inputs_at(1.0), 0, 0).holds
    s_min = reference_advantage_threshold(inputs_at, 0, 0,
                                          np.arange(1.0, 11.0))
    assert s_min is not None
    assert reference_advantage(inputs_at(s_min), 0, 0).holds
    assert set(reference_advantage(inputs_at(5.0), 0, 0).to_dict()) == \
        {"holds", "A", "B", "x"}


def test_amse_inputs_validation():
    with pytest.raises(DataError):
        AmseInputs(np.ones((2, 2)), [0.5, 0.6], [0.5, 0.5], 100)
    with pytest.raises(DataError):
        AmseInputs(np.ones((2, 3)), [0.5, 0.5], [0.5, 0.5], 100)
    with pytest.raises(DataError):
        AmseInputs(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], 0)
