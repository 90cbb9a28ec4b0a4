import json
import logging
from pathlib import Path
from typing import Dict

import duckdb
import pandas as pd

logger = logging.getLogger(__name__)

METRICS_TABLE = "metrics"
CHUNK = 5000


def save_report(report, path) -> Path:
    """Write an ``ExperimentReport`` as JSON; floats keep their shortest round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return path


def load_report(path):
    from podn.harness import ExperimentReport

    return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_run_files(report, out_dir) -> Dict[str, Path]:
    """
    Writes the files of one run into ``out_dir``:
      1. report.json: the full report
      2. training_log.csv: epoch vs. loss components and train accuracy
      3. incremental_log.csv: one row per stream sample
      4. categories.csv: iteration vs. number of categories
      5. detection.csv: per-sample phase-1 decisions (open-set methods only)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {"report": save_report(report, out_dir / "report.json")}

    training = pd.DataFrame(report.training_log)
    written["training_log"] = out_dir / "training_log.csv"
    training.to_csv(written["training_log"], index=False)

    incremental = pd.DataFrame(report.incremental_log,
                               columns=["iteration", "id", "decision", "oracle", "expansion", "n_categories"])
    written["incremental_log"] = out_dir / "incremental_log.csv"
    incremental.to_csv(written["incremental_log"], index=False)

    written["categories"] = out_dir / "categories.csv"
    incremental[["iteration", "n_categories"]].to_csv(written["categories"], index=False)

    if report.per_sample is not None:
        written["detection"] = out_dir / "detection.csv"
        report.per_sample.to_csv(written["detection"], index=False)

    logger.info("run files written to %s", out_dir)
    return written


def long_format(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Prepares suite metrics for the database:
      - adds a ``run_id`` of the form ``<method>_seed<seed>``
      - melts to ['run_id', 'method', 'seed', 'metric', 'value']
      - guarantees float values
    """
    # 1. run id
    df = runs.copy()
    df.insert(0, "run_id", df["method"] + "_seed" + df["seed"].astype(str))

    # 2. long format
    long_df = df.melt(id_vars=["run_id", "method", "seed"], var_name="metric", value_name="value")

    # 3. clean and type
    long_df = long_df.dropna(subset=["value"])
    long_df.drop_duplicates(subset=["run_id", "metric"], inplace=True)
    long_df["seed"] = long_df["seed"].astype("int64")
    long_df["value"] = long_df["value"].astype(float)
    return long_df.reset_index(drop=True)


def export_metrics(runs: pd.DataFrame, db_path) -> int:
    """Insert the long-format suite metrics into ``db_path``; returns the row count written."""
    df_load = long_format(runs)
    con = duckdb.connect(str(db_path))
    try:
        con.execute(f"""
            CREATE TABLE IF NOT EXISTS {METRICS_TABLE} (
                run_id VARCHAR,
                method VARCHAR,
                seed BIGINT,
                metric VARCHAR,
                value DOUBLE
            );
        """)
        # re-exported runs replace their previous rows
        con.register("runs", df_load[["run_id"]].drop_duplicates())
        con.execute(f"DELETE FROM {METRICS_TABLE} WHERE run_id IN (SELECT run_id FROM runs);")
        con.unregister("runs")

        con.execute("BEGIN TRANSACTION;")
        for i in range(0, len(df_load), CHUNK):
            chunk = df_load.iloc[i:i + CHUNK]
            con.register("tmp", chunk)
            con.execute(f"INSERT INTO {METRICS_TABLE} SELECT run_id, method, seed, metric, value FROM tmp;")
            con.unregister("tmp")
        con.execute("COMMIT;")
    finally:
        con.close()
    logger.info("%d metric rows written to %s", len(df_load), db_path)
    return len(df_load)


def read_metrics(db_path) -> pd.DataFrame:
    con = duckdb.connect(str(db_path), read_only=True)
    try:
        return con.execute(f"SELECT * FROM {METRICS_TABLE} ORDER BY run_id, metric").df()
    finally:
        con.close()
