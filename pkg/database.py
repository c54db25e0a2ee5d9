"""
Run registry for the continual-learning engine.
This module records completed runs in SQLite so recent experiments can be listed.
"""

import os
import sqlite3
import json
from datetime import datetime
import logging

logger = logging.getLogger(__name__)


class Database:
    """SQLite registry of completed runs."""

    def __init__(self, db_path=None):
        """Initialize the database connection.

        Args:
            db_path (str, optional): Path to the SQLite database file.
                If None, uses CLFD_DB or `runs.db` in the working directory.
        """
        if db_path is None:
            db_path = os.environ.get('CLFD_DB', 'runs.db')

        if db_path != ':memory:':
            os.makedirs(os.path.dirname(os.path.abspath(db_path)), exist_ok=True)

        self.db_path = db_path
        self.connection = None
        self._initialize_db()

    def _get_connection(self):
        if self.connection is None:
            try:
                self.connection = sqlite3.connect(self.db_path)
                self.connection.row_factory = sqlite3.Row
            except sqlite3.Error as e:
                logger.error(f"Database connection error: {e}")
                raise
        return self.connection

    def _initialize_db(self):
        """Create the runs table if it doesn't exist."""
        try:
            conn = self._get_connection()
            conn.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id TEXT PRIMARY KEY,
                config_digest TEXT NOT NULL,
                strategy TEXT NOT NULL,
                seed INTEGER NOT NULL,
                acc_final REAL,
                ff_final REAL,
                run_dir TEXT,
                summary TEXT,
                created_at TEXT NOT NULL
            )
            ''')
            conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Database initialization error: {e}")
            if self.connection:
                self.connection.rollback()
            raise

    def save_run(self, run_id, config_digest, strategy, seed, summary, run_dir=None):
        """Record a finished run, replacing an earlier record with the same id.

        Args:
            run_id (str): Run identifier.
            config_digest (str): sha256 of the run configuration.
            strategy (str): Run name, e.g. CLFD-ER.
            seed (int): Run seed.
            summary (dict): Summary metrics of the run.
            run_dir (str, optional): Where the artifacts live.

        Returns:
            str: The run id.
        """
        try:
            conn = self._get_connection()
            conn.execute(
                '''
                INSERT OR REPLACE INTO runs
                    (id, config_digest, strategy, seed, acc_final, ff_final, run_dir, summary, created_at)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
                ''',
                (run_id, config_digest, strategy, int(seed), _real(summary.get('acc_final')),
                 _real(summary.get('ff_final')), run_dir, json.dumps(summary, default=float),
                 datetime.now().isoformat())
            )
            conn.commit()
            logger.info(f"Run registered with ID: {run_id}")
            return run_id
        except sqlite3.Error as e:
            logger.error(f"Error saving run: {e}")
            if self.connection:
                self.connection.rollback()
            raise

    def get_run(self, run_id):
        """Retrieve one run, or None if it is not registered."""
        try:
            row = self._get_connection().execute('SELECT * FROM runs WHERE id = ?', (run_id,)).fetchone()
            if row:
                run = dict(row)
                run['summary'] = json.loads(run['summary']) if run['summary'] else {}
                return run
            return None
        except sqlite3.Error as e:
            logger.error(f"Error retrieving run: {e}")
            return None

    def get_recent_runs(self, limit=10):
        """Most recent runs first."""
        try:
            rows = self._get_connection().execute(
                '''
                SELECT id, strategy, seed, acc_final, ff_final, run_dir, created_at
                FROM runs
                ORDER BY created_at DESC
                LIMIT ?
                ''',
                (limit,)
            ).fetchall()
            return [dict(row) for row in rows]
        except sqlite3.Error as e:
            logger.error(f"Error retrieving recent runs: {e}")
            return []

    def close(self):
        if self.connection:
            self.connection.close()
            self.connection = None


def _real(value):
    """NaN-safe float for REAL columns."""
    if value is None:
        return None
    value = float(value)
    return None if value != value else value
