import csv
import io
import logging
import os
import tempfile
from pathlib import Path

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from config import CSV_SCHEMA_VERSION, DEFAULT_OUT_DIR, OUT_DIR_ENV, RUN_CSV_HEADERS
from utils import canonical_json

logger = logging.getLogger(__name__)

# a transient OS error gets a short backoff; every retried write rebuilds the whole file
_io_retry = retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, max=1.0),
    reraise=True,
)


def out_dir(override=None) -> Path:
    """--out beats BASILIC_OUT_DIR beats ./out; created on demand."""
    path = Path(override or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _replace(path: Path, data: bytes):
    """Write data next to path and rename it over path, so readers never see a partial file."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _append(path: Path, data: bytes):
    old = path.read_bytes() if path.exists() else b""
    _replace(path, old + data)


@_io_retry
def write_run_rows(path, rows: list[dict]):
    """
    Appends one CSV row per run, header first when the file is new.
    Columns follow RUN_CSV_HEADERS exactly.
    """
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RUN_CSV_HEADERS, lineterminator="\n")
    if fresh:
        writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "-") for k in RUN_CSV_HEADERS})
    _append(path, buf.getvalue().encode())
    logger.debug("wrote %d rows to %s", len(rows), path)


def read_all_records(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def error_row(scenario: str, seed: int, protocol: str, note: str) -> dict:
    """Row for a seed whose run raised: every metric "-", status error."""
    row = {k: "-" for k in RUN_CSV_HEADERS}
    row.update({
        "schema": CSV_SCHEMA_VERSION,
        "scenario": scenario,
        "seed": seed,
        "protocol": protocol,
        "status": "error",
        "note": " ".join(str(note).split()) or "-",
    })
    return row


@_io_retry
def write_json_lines(path, items):
    """One canonical JSON object (or pre-encoded bytes) per line."""
    lines = [bytes(item if isinstance(item, (bytes, bytearray)) else canonical_json(item)) + b"\n"
             for item in items]
    _append(Path(path), b"".join(lines))


def write_trace(path, trace: list[dict]):
    write_json_lines(path, trace)


def write_chain_dump(path, blocks: list[dict]):
    """Blocks one per line with their certificate digests; the file is rewritten."""
    path = Path(path)
    if path.exists():
        path.unlink()
    write_json_lines(path, blocks)


@_io_retry
def write_table(path, headers: list[str], rows: list):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(rows)


def load_latency_table(path) -> dict:
    """
    Region latency table from a CSV with columns from, to, ms.
    Raises ValueError on a missing column or a non-numeric latency.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"from", "to", "ms"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"latency table {path.name} lacks column(s) {', '.join(sorted(missing))}")
        table = {}
        for line, rec in enumerate(reader, start=2):
            try:
                table[(rec["from"].strip(), rec["to"].strip())] = float(rec["ms"])
            except (TypeError, ValueError):
                raise ValueError(f"latency table {path.name} line {line}: bad ms value {rec['ms']!r}") from None
    return table
