"""
Health Check Utility
Validates a run's output directory: required files present, schemas intact,
frame counts consistent with the summary.
"""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.settings import DEFAULT_OUTPUT_DIR
from utils.csv_io import REQUIRED_OUTPUTS, SCHEMAS, read_csv
from utils.errors import OutputError


def _check_schema(path):
    """Header matches the documented schema and the file has data rows"""
    try:
        df = read_csv(path)
    except OutputError as e:
        return None, f"✗ Unreadable: {str(e)}"
    expected = SCHEMAS[path.name]
    if list(df.columns) != expected:
        return None, f"✗ Columns {list(df.columns)} != {expected}"
    if df.empty:
        return df, "⚠ No data rows"
    return df, f"✓ OK ({len(df)} rows)"


def check_output_health(output_dir=DEFAULT_OUTPUT_DIR):
    """
    Check every CSV of an output directory

    Args:
        output_dir: directory written by `app.py run`

    Returns:
        (all_healthy, dict of file -> status string)
    """
    output_dir = Path(output_dir)
    checks = {}
    tables = {}
    all_healthy = True

    if not output_dir.is_dir():
        print(f"✗ Output directory not found: {output_dir}")
        return False, {"output_dir": "✗ Missing"}

    for name in SCHEMAS:
        path = output_dir / name
        if not path.exists():
            if name in REQUIRED_OUTPUTS:
                checks[name] = "✗ Missing"
                all_healthy = False
            continue
        df, status = _check_schema(path)
        checks[name] = status
        if df is None or status.startswith("⚠"):
            all_healthy = False
        else:
            tables[name] = df

    # Frame counts in summary.csv must match the rows of frames.csv
    if "frames.csv" in tables and "summary.csv" in tables:
        frames, summary = tables["frames.csv"], tables["summary.csv"]
        counted = frames.groupby(["measurement", "chain"]).size()
        ok = summary[summary["status"] == "ok"]
        mismatched = [
            (row.measurement, row.chain) for row in ok.itertuples()
            if counted.get((row.measurement, row.chain), 0) != row.n_frames
        ]
        if mismatched:
            checks["consistency"] = f"✗ Frame counts differ for {mismatched}"
            all_healthy = False
        else:
            checks["consistency"] = "✓ OK"

    for name, status in checks.items():
        print(f"{name:>16}: {status}")

    overall = "healthy" if all_healthy else "degraded"
    print(f"\n{'='*60}")
    print(f"Overall Status: {overall.upper()}")
    print(f"{'='*60}")
    return all_healthy, checks


if __name__ == "__main__":
    try:
        healthy, _ = check_output_health(sys.argv[1] if len(sys.argv) > 1 else DEFAULT_OUTPUT_DIR)
        sys.exit(0 if healthy else 1)
    except Exception as e:
        print(f"✗ Health check failed: {str(e)}")
        sys.exit(1)
