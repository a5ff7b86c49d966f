"""
Output CSV schemas and writer
Column names and order are fixed; floats carry 9 significant digits.
"""
from pathlib import Path

import pandas as pd

from config.settings import CSV_FLOAT_FORMAT
from utils.errors import OutputError

FRAMES_COLUMNS = ["measurement", "frame", "chain", "t_hat", "xi_hat", "i_ab", "chi_be", "skf"]
SUMMARY_COLUMNS = [
    "measurement", "chain", "status", "n_frames", "mean_t_hat", "mean_xi_hat",
    "median_xi_hat", "mean_i_ab", "mean_chi_be", "mean_skf", "freq_offset_hz", "v_el", "error",
]
SPECTRA_COLUMNS = ["measurement", "freq_hz", "psd_db_x", "psd_db_y"]
TRACE_COLUMNS = ["measurement", "sample", "theta", "phi", "theta_ukf", "phi_ukf"]
ESTIMATES_COLUMNS = ["measurement", "k", "a", "b", "phi", "var_a", "var_b", "var_phi"]
CMA_WEIGHTS_COLUMNS = ["measurement", "sample", "w11_re", "w11_im", "w12_re", "w12_im"]
HISTOGRAM_COLUMNS = ["chain", "bin_left", "bin_right", "count"]
SWEEP_COLUMNS = [
    "parameter", "value", "chain", "mean_xi_hat", "mean_i_ab", "mean_skf", "positive_key_measurements",
]

SCHEMAS = {
    "frames.csv": FRAMES_COLUMNS,
    "summary.csv": SUMMARY_COLUMNS,
    "spectra.csv": SPECTRA_COLUMNS,
    "trace.csv": TRACE_COLUMNS,
    "estimates.csv": ESTIMATES_COLUMNS,
    "cma_weights.csv": CMA_WEIGHTS_COLUMNS,
    "histogram.csv": HISTOGRAM_COLUMNS,
    "sweep.csv": SWEEP_COLUMNS,
}
REQUIRED_OUTPUTS = ("frames.csv", "summary.csv", "spectra.csv")


def write_csv(df, path, columns=None):
    """Write with the fixed column order, '\\n' line endings and 9-digit floats"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or SCHEMAS.get(path.name)
    frame = df.reindex(columns=columns) if columns else df
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path):
    try:
        return pd.read_csv(path, keep_default_na=False, na_values=[""])
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise OutputError(f"cannot read {path}: {e}") from e
