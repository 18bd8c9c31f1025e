import logging
import sqlite3
from typing import List, Optional

import numpy as np
import pandas as pd

from src.simlab import coefficient_names, summarize_estimates

logger = logging.getLogger(__name__)


class ResultsStore:
    """
    SQLite store of per-replication slope estimates, so a finished run can be
    re-summarized (or extended with new metrics) without re-simulating.
    """

    def __init__(self, db_path: str = "eiv_results.db"):
        self.db_path = db_path
        self.conn = None
        self.init_db()

    def init_db(self):
        """
        Opens the connection and creates the estimates table.
        WAL mode lets a summarize run read while a simulation writes.
        """
        self.conn = sqlite3.connect(self.db_path, check_same_thread=False)
        self.conn.row_factory = sqlite3.Row

        cursor = self.conn.cursor()
        cursor.execute("PRAGMA journal_mode=WAL;")
        cursor.execute("PRAGMA synchronous=NORMAL;")
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS replicate_estimates (
                scenario TEXT NOT NULL,
                n INTEGER NOT NULL,
                seed INTEGER NOT NULL,
                rep INTEGER NOT NULL,
                estimator TEXT NOT NULL,
                coefficient INTEGER NOT NULL,
                estimate REAL,
                stderr REAL,
                stderr_hc3 REAL,
                error TEXT,
                PRIMARY KEY (scenario, n, seed, rep, estimator, coefficient)
            )
        """)
        self.conn.commit()

    def drop_tables(self):
        cursor = self.conn.cursor()
        cursor.execute("DROP TABLE IF EXISTS replicate_estimates")
        self.conn.commit()
        logger.info("Results tables dropped.")
        self.init_db()

    def insert_outcomes(self, scenario: str, n: int, seed: int, outcomes) -> int:
        """
        Writes one row per (replication, estimator, coefficient). A failed fit
        is kept as a NULL estimate with its error message.
        Re-running the same scenario/n/seed replaces earlier rows.
        """
        records = []
        for o in outcomes:
            for tag, est in o.estimates.items():
                if est is None:
                    records.append((scenario, n, seed, o.rep, tag, 0, None, None, None, o.errors.get(tag)))
                    continue
                for j, value in enumerate(np.atleast_1d(est)):
                    se = hc3 = None
                    if tag == "OLS":
                        se = None if o.stderr is None else float(o.stderr[j])
                        hc3 = None if o.stderr_hc3 is None else float(o.stderr_hc3[j])
                    records.append((scenario, n, seed, o.rep, tag, j, float(value), se, hc3, None))
        with self.conn:
            self.conn.executemany(
                """
                INSERT OR REPLACE INTO replicate_estimates
                (scenario, n, seed, rep, estimator, coefficient, estimate, stderr, stderr_hc3, error)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                records,
            )
        logger.debug(f"Stored {len(records)} estimates for {scenario} (n={n})")
        return len(records)

    def get_estimates(self, scenario: str, n: Optional[int] = None, seed: Optional[int] = None) -> pd.DataFrame:
        query = "SELECT * FROM replicate_estimates WHERE scenario = ?"
        params: list = [scenario]
        if n is not None:
            query += " AND n = ?"
            params.append(n)
        if seed is not None:
            query += " AND seed = ?"
            params.append(seed)
        query += " ORDER BY n, seed, rep, estimator, coefficient"
        return pd.read_sql_query(query, self.conn, params=params)

    def scenarios(self) -> List[str]:
        rows = self.conn.execute("SELECT DISTINCT scenario FROM replicate_estimates ORDER BY scenario").fetchall()
        return [r["scenario"] for r in rows]

    def summarize(self, scenario: str, beta=None, estimator_order=None):
        """
        Rebuilds MetricsRow values from stored estimates, grouped by (n, seed),
        estimator and coefficient. `beta` defaults to all-ones true slopes.
        """
        frame = self.get_estimates(scenario)
        if frame.empty:
            return []
        p = int(frame["coefficient"].max()) + 1
        names = coefficient_names(p)
        beta = list(beta) if beta is not None else [1.0] * p
        order = {tag: i for i, tag in enumerate(estimator_order or [])}

        rows = []
        for (n, seed), block in frame.groupby(["n", "seed"], sort=True):
            tags = sorted(block["estimator"].unique(), key=lambda t: (order.get(t, len(order)), t))
            for tag in tags:
                part = block[block["estimator"] == tag]
                failures = int(part.loc[part["estimate"].isna(), "rep"].nunique())
                for j in range(p):
                    coef = part[(part["coefficient"] == j) & part["estimate"].notna()]
                    if coef.empty:
                        continue
                    rows.append(
                        summarize_estimates(
                            coef["estimate"].to_numpy(), beta[j], tag, names[j], int(seed),
                            n=int(n), failures=failures,
                            stderr=coef["stderr"].dropna().to_numpy() if tag == "OLS" else None,
                            stderr_hc3=coef["stderr_hc3"].dropna().to_numpy() if tag == "OLS" else None,
                        )
                    )
        return rows

    def close(self):
        if self.conn:
            self.conn.close()
