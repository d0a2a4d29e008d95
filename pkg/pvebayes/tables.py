"""
Contingency tables of adverse-event report counts, the two null-baseline
expected-count estimators, and the asymptotic mean squared errors of
both estimators.
"""
import os
import numpy as np
from astropy.io import ascii
from astropy.table import Table

from pvebayes.constants import statin_fixtures, \
    statin_reference_row, statin_reference_col
from pvebayes.utils import mylog, DataError, NumericalError, \
    pvebayes_files_path, check_file_location


class ContingencyTable:
    """
    An I x J table of report counts with AEs as rows and drugs as
    columns. The last row and the last column are the reference
    categories (e.g. "other AEs" and "other drugs").

    Parameters
    ----------
    counts : array-like
        The (I, J) array of non-negative integer counts.
    row_labels : list of strings, optional
        The AE labels. Default: "AE1", "AE2", ...
    col_labels : list of strings, optional
        The drug labels. Default: "D1", "D2", ...
    """
    def __init__(self, counts, row_labels=None, col_labels=None):
        counts = np.asarray(counts)
        if counts.ndim != 2:
            raise DataError(f"A contingency table must be two-dimensional, "
                            f"got {counts.ndim} dimensions!")
        I, J = counts.shape
        if I < 2 or J < 2:
            raise DataError(f"A contingency table needs at least 2 rows "
                            f"and 2 columns, got {I} x {J}!")
        if not np.all(np.isfinite(counts)):
            raise DataError("Contingency table counts must be finite!")
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise DataError(f"Negative count {counts[i, j]} in cell "
                            f"({i}, {j})!")
        if np.any(np.asarray(counts) != np.round(counts)):
            i, j = np.argwhere(counts != np.round(counts))[0]
            raise DataError(f"Non-integer count {counts[i, j]} in cell "
                            f"({i}, {j})!")
        if row_labels is None:
            row_labels = [f"AE{i+1}" for i in range(I)]
        if col_labels is None:
            col_labels = [f"D{j+1}" for j in range(J)]
        row_labels = [str(label) for label in row_labels]
        col_labels = [str(label) for label in col_labels]
        if len(row_labels) != I or len(col_labels) != J:
            raise DataError("The number of labels does not match the "
                            "shape of the table!")
        for kind, labels in [("row", row_labels), ("column", col_labels)]:
            if len(set(labels)) != len(labels):
                dups = sorted({lb for lb in labels if labels.count(lb) > 1})
                raise DataError(f"Duplicate {kind} labels: {dups}!")
        self.counts = counts.astype("int64")
        self.counts.setflags(write=False)
        self.row_labels = row_labels
        self.col_labels = col_labels
        self.row_totals = self.counts.sum(axis=1)
        self.col_totals = self.counts.sum(axis=0)
        self.total = int(self.counts.sum())
        for arr in [self.row_totals, self.col_totals]:
            arr.setflags(write=False)
        if self.total == 0:
            raise DataError("The contingency table is empty!")
        empty_rows = np.where(self.row_totals == 0)[0]
        empty_cols = np.where(self.col_totals == 0)[0]
        if empty_rows.size > 0 or empty_cols.size > 0:
            names = [row_labels[i] for i in empty_rows] + \
                    [col_labels[j] for j in empty_cols]
            raise DataError(f"Rows or columns with no reports give zero "
                            f"expected counts: {names}!")

    def __repr__(self):
        return f"ContingencyTable({self.n_rows} AEs x {self.n_cols} drugs, " \
               f"total={self.total})"

    @property
    def shape(self):
        return self.counts.shape

    @property
    def n_rows(self):
        return self.counts.shape[0]

    @property
    def n_cols(self):
        return self.counts.shape[1]

    @property
    def reference_row(self):
        return self.n_rows - 1

    @property
    def reference_col(self):
        return self.n_cols - 1

    @property
    def non_reference_mask(self):
        """
        Boolean (I, J) mask which is False on the reference row and column.
        """
        mask = np.ones(self.shape, dtype="bool")
        mask[-1, :] = False
        mask[:, -1] = False
        return mask

    def cell_mask(self, exclude_reference=True):
        if exclude_reference:
            return self.non_reference_mask
        return np.ones(self.shape, dtype="bool")

    @classmethod
    def from_file(cls, filename, reference_row=None, reference_col=None):
        """
        Read a contingency table from a CSV file. The first row
        holds the drug labels, the first column the AE labels.

        Parameters
        ----------
        filename : string
            The path to the CSV file.
        reference_row : string, optional
            The label of the reference AE. It is moved to the last
            row. Default: the last row of the file.
        reference_col : string, optional
            The label of the reference drug. It is moved to the last
            column. Default: the last column of the file.
        """
        if not os.path.exists(filename):
            raise FileNotFoundError(f"Cannot find the table file {filename}!")
        try:
            raw = ascii.read(filename, format="no_header", delimiter=",",
                             guess=False)
        except ValueError as e:
            raise DataError(f"Malformed CSV file {filename}: {e}")
        rows = [[str(v).strip() for v in row] for row in raw]
        if len(rows) < 3 or len(rows[0]) < 3:
            raise DataError(f"The CSV file {filename} must hold a header "
                            f"row, a label column and at least a 2 x 2 "
                            f"table of counts!")
        col_labels = rows[0][1:]
        row_labels = [row[0] for row in rows[1:]]
        try:
            counts = np.array([[float(v) for v in row[1:]]
                               for row in rows[1:]])
        except ValueError as e:
            raise DataError(f"Malformed count in {filename}: {e}")
        table = cls(counts, row_labels=row_labels, col_labels=col_labels)
        mylog.info(f"Read a {table.n_rows} x {table.n_cols} table with "
                   f"{table.total} reports from {filename}.")
        return table.move_reference(reference_row, reference_col)

    def move_reference(self, reference_row=None, reference_col=None):
        """
        Return a new table with the given reference row and column
        labels moved to the last positions.
        """
        ridx = np.arange(self.n_rows)
        cidx = np.arange(self.n_cols)
        if reference_row is not None:
            if reference_row not in self.row_labels:
                raise DataError(f"Reference row '{reference_row}' is "
                                f"not in the table!")
            k = self.row_labels.index(reference_row)
            ridx = np.append(np.delete(ridx, k), k)
        if reference_col is not None:
            if reference_col not in self.col_labels:
                raise DataError(f"Reference column '{reference_col}' is "
                                f"not in the table!")
            k = self.col_labels.index(reference_col)
            cidx = np.append(np.delete(cidx, k), k)
        if np.all(ridx == np.arange(self.n_rows)) and \
                np.all(cidx == np.arange(self.n_cols)):
            return self
        return ContingencyTable(self.counts[np.ix_(ridx, cidx)],
                                row_labels=[self.row_labels[i] for i in ridx],
                                col_labels=[self.col_labels[j] for j in cidx])

    def to_table(self):
        t = Table()
        t["AE"] = self.row_labels
        for j, label in enumerate(self.col_labels):
            t[label] = self.counts[:, j]
        return t

    def write_file(self, filename, overwrite=False):
        """
        Write the table to a CSV file in the same layout
        read by :meth:`~pvebayes.tables.ContingencyTable.from_file`.

        Parameters
        ----------
        filename : string
            The filename to write the table to.
        overwrite : boolean, optional
            Whether or not to overwrite an existing
            file with the same name. Default: False
        """
        check_file_location(filename, overwrite)
        self.to_table().write(filename, format="ascii.csv",
                              overwrite=overwrite)


def ingest_csv(path, reference_row_label, reference_col_label):
    """
    Read a contingency table from a CSV file and move the reference
    row and column to the last positions.

    Parameters
    ----------
    path : string
        The path to the CSV file.
    reference_row_label : string
        The label of the reference AE.
    reference_col_label : string
        The label of the reference drug.

    Returns
    -------
    A :class:`~pvebayes.tables.ContingencyTable` instance.
    """
    return ContingencyTable.from_file(path, reference_row=reference_row_label,
                                      reference_col=reference_col_label)


def load_fixture(name):
    """
    Load one of the statin tables bundled with pvebayes.

    Parameters
    ----------
    name : string
        Either "statin46" or "statin42".
    """
    if name not in statin_fixtures:
        raise KeyError(f"'{name}' is not a bundled table! Options are "
                       f"{list(statin_fixtures.keys())}.")
    fn = os.path.join(pvebayes_files_path, statin_fixtures[name])
    return ingest_csv(fn, statin_reference_row, statin_reference_col)


class ExpectedCounts:
    """
    Null-baseline expected counts for every cell of a table.

    Parameters
    ----------
    values : array-like
        The (I, J) array of expected counts.
    kind : string
        "natural" or "reference".
    """
    _kinds = ("natural", "reference")

    def __init__(self, values, kind):
        if kind not in self._kinds:
            raise ValueError(f"Unknown estimator kind '{kind}'!")
        values = np.array(values, dtype="float64")
        if not np.all(np.isfinite(values)):
            raise NumericalError("Expected counts must be finite!")
        if np.any(values < 0.0):
            raise NumericalError("Expected counts must be non-negative!")
        values.setflags(write=False)
        self.values = values
        self.kind = kind

    def __repr__(self):
        return f"ExpectedCounts(kind='{self.kind}', shape={self.values.shape})"

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)


def expected_natural(table):
    """
    The natural estimator of the null expected counts,
    N_i. N_.j / N_.., for every cell of *table*.
    """
    E = np.outer(table.row_totals, table.col_totals).astype("float64")
    E /= table.total
    return ExpectedCounts(E, "natural")


def expected_reference(table):
    """
    The reference-cell estimator of the null expected counts,
    N_iJ N_Ij / N_IJ, for every cell of *table* (reference
    cells included), where I and J are the reference row and
    column.
    """
    corner = table.counts[-1, -1]
    if corner == 0:
        raise DataError("The reference cell count N_IJ is zero, so the "
                        "reference estimator is undefined. Use the natural "
                        "estimator instead.")
    E = np.outer(table.counts[:, -1], table.counts[-1, :]).astype("float64")
    E /= corner
    return ExpectedCounts(E, "reference")


def get_expected(table, kind):
    if kind == "natural":
        return expected_natural(table)
    elif kind == "reference":
        return expected_reference(table)
    raise ValueError(f"Unknown expected-count estimator '{kind}'! "
                     f"Options are 'natural' and 'reference'.")


class AmseInputs:
    """
    The population quantities that determine the asymptotic
    mean squared errors of both expected-count estimators.

    Parameters
    ----------
    lambda_true : array-like
        The (I, J) array of true signal strengths.
    p_row : array-like
        The length-I vector of AE marginal probabilities.
    p_col : array-like
        The length-J vector of drug marginal probabilities.
    grand_total : integer
        The total number of reports.
    """
    def __init__(self, lambda_true, p_row, p_col, grand_total):
        lam = np.asarray(lambda_true, dtype="float64")
        p_row = np.asarray(p_row, dtype="float64")
        p_col = np.asarray(p_col, dtype="float64")
        if lam.shape != (p_row.size, p_col.size):
            raise DataError(f"lambda_true has shape {lam.shape}, expected "
                            f"{(p_row.size, p_col.size)}!")
        if np.any(lam < 0.0):
            raise DataError("Signal strengths must be non-negative!")
        for name, p in [("p_row", p_row), ("p_col", p_col)]:
            if np.any(p < 0.0) or abs(p.sum()-1.0) > 1.0e-12:
                raise DataError(f"{name} must be a probability vector!")
        if grand_total <= 0:
            raise DataError("grand_total must be positive!")
        self.lambda_true = lam
        self.p_row = p_row
        self.p_col = p_col
        self.grand_total = grand_total

    @classmethod
    def from_table(cls, table, lambda_true=None):
        """
        Build inputs whose marginal probabilities are the observed
        marginal proportions of *table*.
        """
        if lambda_true is None:
            lambda_true = np.ones(table.shape)
        p_row = table.row_totals / table.total
        p_col = table.col_totals / table.total
        # enforce the unit sums exactly
        p_row = p_row / p_row.sum()
        p_col = p_col / p_col.sum()
        return cls(lambda_true, p_row, p_col, table.total)

    @property
    def lambda_row(self):
        return self.lambda_true @ self.p_col

    @property
    def lambda_col(self):
        return self.p_row @ self.lambda_true

    @property
    def lambda_bar(self):
        return float(self.p_row @ self.lambda_true @ self.p_col)

    def cell_probabilities(self):
        lam_bar = self.lambda_bar
        if lam_bar <= 0.0:
            raise NumericalError("The mean signal strength must be positive!")
        return self.lambda_true*np.outer(self.p_row, self.p_col)/lam_bar

    def null_expected(self):
        return self.grand_total*np.outer(self.p_row, self.p_col)


def _check_amse_cell(inputs, i, j):
    if inputs.lambda_bar <= 0.0:
        raise NumericalError("The mean signal strength must be positive!")
    if inputs.p_row[i] <= 0.0 or inputs.p_col[j] <= 0.0:
        raise DataError(f"Cell ({i}, {j}) has a zero marginal probability!")


def _finite(value, what):
    if not np.isfinite(value):
        raise NumericalError(f"Non-finite value in {what}!")
    return float(value)


def amse_natural(inputs, i, j):
    """
    The asymptotic mean squared error of E_hat_ij / E_ij for
    the natural estimator.

    Parameters
    ----------
    inputs : :class:`~pvebayes.tables.AmseInputs`
        The population quantities.
    i : integer
        The row index of the cell.
    j : integer
        The column index of the cell.
    """
    _check_amse_cell(inputs, i, j)
    lam_bar = inputs.lambda_bar
    li = inputs.lambda_row[i]
    lj = inputs.lambda_col[j]
    lij = inputs.lambda_true[i, j]
    pi = inputs.p_row[i]
    pj = inputs.p_col[j]
    N = inputs.grand_total
    bracket = lam_bar*(2.0*lij + li/pj + lj/pi) - 4.0*li*lj
    var = li*lj*bracket/(lam_bar**4*N)
    bias2 = (li*lj/lam_bar**2 - 1.0)**2
    return _finite(var + bias2, "amse_natural")


def amse_reference(inputs, i, j):
    """
    The asymptotic mean squared error of E_tilde_ij / E_ij for
    the reference-cell estimator.

    Parameters
    ----------
    inputs : :class:`~pvebayes.tables.AmseInputs`
        The population quantities.
    i : integer
        The row index of the cell.
    j : integer
        The column index of the cell.
    """
    _check_amse_cell(inputs, i, j)
    lam_bar = inputs.lambda_bar
    pI = inputs.p_row[-1]
    pJ = inputs.p_col[-1]
    pi = inputs.p_row[i]
    pj = inputs.p_col[j]
    N = inputs.grand_total
    var = (1.0/(pI*pJ*lam_bar) + 1.0/(pi*pJ*lam_bar) +
           1.0/(pI*pj*lam_bar) - 1.0/lam_bar**2)/N
    bias2 = (1.0/lam_bar - 1.0)**2
    return _finite(var + bias2, "amse_reference")


class ReferenceAdvantage:
    """
    Whether the reference-cell estimator provably beats the natural
    estimator at one cell, together with the interval end points
    A and B.
    """
    def __init__(self, holds, A, B, x):
        self.holds = bool(holds)
        self.A = float(A)
        self.B = float(B)
        self.x = float(x)

    def __repr__(self):
        return f"ReferenceAdvantage(holds={self.holds}, A={self.A:.6g}, " \
               f"B={self.B:.6g}, x={self.x:.6g})"

    def to_dict(self):
        return {"holds": self.holds, "A": self.A, "B": self.B, "x": self.x}


def reference_advantage(inputs, i, j):
    """
    Check the sufficient condition under which the reference-cell
    estimator has a smaller asymptotic mean squared error than the
    natural estimator at cell (i, j).

    The condition holds when x = lambda_i. * lambda_.j lies in
    (B, inf), or in (1, A) when A > 1.

    Parameters
    ----------
    inputs : :class:`~pvebayes.tables.AmseInputs`
        The population quantities.
    i : integer
        The row index of the cell.
    j : integer
        The column index of the cell.

    Returns
    -------
    A :class:`~pvebayes.tables.ReferenceAdvantage` instance.
    """
    lam_bar = inputs.lambda_bar
    if lam_bar <= 0.0:
        raise NumericalError("The mean signal strength must be positive!")
    E = inputs.null_expected()
    E_iJ = E[i, -1]
    E_Ij = E[-1, j]
    E_IJ = E[-1, -1]
    if min(E_iJ, E_Ij, E_IJ) < 4.0:
        mylog.warning(f"Reference expected counts for cell ({i}, {j}) are "
                      f"below 4; the AMSE comparison may be unreliable.")
    s = np.sqrt((1.0-1.0/lam_bar)**2 +
                (1.0/E_iJ + 1.0/E_Ij + 1.0/E_IJ)/lam_bar)
    A = lam_bar**2*(1.0-s)
    B = lam_bar**2*(1.0+s)
    x = inputs.lambda_row[i]*inputs.lambda_col[j]
    holds = x > B or (A > 1.0 and 1.0 < x < A)
    return ReferenceAdvantage(holds, A, B, x)


def reference_advantage_threshold(inputs_factory, i, j, strengths):
    """
    The smallest strength in *strengths* for which the condition
    of :func:`~pvebayes.tables.reference_advantage` holds at cell
    (i, j), or None if it never holds.

    Parameters
    ----------
    inputs_factory : callable
        Maps a signal strength to an :class:`~pvebayes.tables.AmseInputs`.
    i : integer
        The row index of the cell.
    j : integer
        The column index of the cell.
    strengths : array-like
        The strengths to scan, in any order.
    """
    for s in np.sort(np.asarray(strengths, dtype="float64")):
        if reference_advantage(inputs_factory(s), i, j).holds:
            return float(s)
    return None
