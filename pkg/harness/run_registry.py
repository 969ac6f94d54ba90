"""
SQLite registry of estimate and sweep invocations
"""

import json
import logging
import sqlite3
import threading
import time
from contextlib import contextmanager
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class RunRegistry:
    """Records each experiment run with its parameters and aggregate NMSE"""

    def __init__(self, db_file: str = "mbce_runs.db"):
        self.db_file = db_file
        self._lock = threading.Lock()
        self._initialize_schema()
        logger.info(f"Run registry initialized at: {self.db_file}")

    def _initialize_schema(self):
        with self._get_connection() as conn:
            c = conn.cursor()
            c.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id               INTEGER PRIMARY KEY AUTOINCREMENT,
                    ts               REAL    NOT NULL,
                    command          TEXT    NOT NULL,
                    method           TEXT,
                    bundle_hash      TEXT,
                    params           TEXT    NOT NULL,
                    samples          INTEGER,
                    aggregate_nmse_db REAL
                );
            """)
            c.execute("CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command);")
            conn.commit()

    @contextmanager
    def _get_connection(self):
        conn = sqlite3.connect(self.db_file, timeout=10.0)
        try:
            yield conn
        finally:
            conn.close()

    def record_run(self,
                   command: str,
                   params: Dict,
                   method: Optional[str] = None,
                   bundle_hash: Optional[str] = None,
                   samples: Optional[int] = None,
                   aggregate_nmse_db: Optional[float] = None) -> int:
        """
        Insert one run and return its id.

        :param command: CLI subcommand ('estimate', 'sweep', ...)
        :param params: JSON-serializable parameters of the run
        :param method: estimator name, when the run has a single one
        :param bundle_hash: content hash of the evaluated dataset
        :param samples: number of evaluated samples
        :param aggregate_nmse_db: dB of the mean linear NMSE
        """
        with self._lock, self._get_connection() as conn:
            c = conn.cursor()
            c.execute("""
                INSERT INTO runs
                    (ts, command, method, bundle_hash, params, samples, aggregate_nmse_db)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, (time.time(), command, method, bundle_hash, json.dumps(params, sort_keys=True), samples,
                  aggregate_nmse_db))
            conn.commit()
            run_id = c.lastrowid
        logger.debug(f"Recorded {command} run {run_id}")
        return run_id

    def _rows(self, query: str, args=()) -> List[Dict]:
        with self._get_connection() as conn:
            c = conn.cursor()
            c.execute(query, args)
            cols = [col[0] for col in c.description]
            rows = [dict(zip(cols, row)) for row in c.fetchall()]
        for row in rows:
            row['params'] = json.loads(row['params'])
        return rows

    def list_runs(self, command: Optional[str] = None, limit: Optional[int] = None) -> List[Dict]:
        """Runs, newest first, optionally filtered by command."""
        query = "SELECT * FROM runs"
        args = []
        if command is not None:
            query += " WHERE command = ?"
            args.append(command)
        query += " ORDER BY id DESC"
        if limit is not None:
            query += " LIMIT ?"
            args.append(int(limit))
        return self._rows(query, tuple(args))

    def get_run(self, run_id: int) -> Optional[Dict]:
        rows = self._rows("SELECT * FROM runs WHERE id = ?", (run_id,))
        return rows[0] if rows else None

    def best_run(self, method: str) -> Optional[Dict]:
        """Lowest aggregate NMSE recorded for a method."""
        rows = self._rows("""
            SELECT * FROM runs
             WHERE method = ? AND aggregate_nmse_db IS NOT NULL
          ORDER BY aggregate_nmse_db ASC, id ASC
             LIMIT 1
        """, (method,))
        return rows[0] if rows else None

    def clear_all(self) -> None:
        with self._lock, self._get_connection() as conn:
            conn.execute("DELETE FROM runs")
            conn.commit()
            logger.info("Cleared all run records")
