# resultstore.py
"""
sqlite store of per-replication outcomes, keyed by (study, eta, rep).
Lets an interrupted Monte Carlo study resume without recomputing finished
replications.
"""
import json
import os
import sqlite3
import time
from typing import Dict, Optional, Set

DB_PATH = os.environ.get("EIV_SIM_DB", "")


class ReplicationStore:
    def __init__(self, path: Optional[str] = None):
        self.path = path or DB_PATH or "replications.db"
        self.conn = sqlite3.connect(self.path, check_same_thread=False)
        self._init_db()

    def _init_db(self):
        c = self.conn.cursor()
        c.execute("""
        CREATE TABLE IF NOT EXISTS replications (
            study TEXT,
            eta REAL,
            rep INTEGER,
            outcome TEXT,
            timestamp REAL,
            PRIMARY KEY (study, eta, rep)
        )
        """)
        self.conn.commit()

    def upsert(self, study: str, eta: float, rep: int, outcome: dict):
        if not study:
            raise ValueError("ReplicationStore.upsert requires a study key")
        c = self.conn.cursor()
        c.execute("""
        INSERT OR REPLACE INTO replications (study, eta, rep, outcome, timestamp)
        VALUES (?, ?, ?, ?, ?)
        """, (study, float(eta), int(rep), json.dumps(outcome), time.time()))
        self.conn.commit()

    def upsert_many(self, study: str, eta: float, outcomes: Dict[int, dict]):
        now = time.time()
        rows = [(study, float(eta), int(rep), json.dumps(out), now) for rep, out in outcomes.items()]
        c = self.conn.cursor()
        c.executemany("""
        INSERT OR REPLACE INTO replications (study, eta, rep, outcome, timestamp)
        VALUES (?, ?, ?, ?, ?)
        """, rows)
        self.conn.commit()

    def fetch(self, study: str, eta: float) -> Dict[int, dict]:
        c = self.conn.cursor()
        rows = c.execute("SELECT rep, outcome FROM replications WHERE study=? AND eta=? ORDER BY rep",
                         (study, float(eta))).fetchall()
        return {int(rep): json.loads(outcome) for rep, outcome in rows}

    def completed_indices(self, study: str, eta: float) -> Set[int]:
        c = self.conn.cursor()
        rows = c.execute("SELECT rep FROM replications WHERE study=? AND eta=?",
                         (study, float(eta))).fetchall()
        return {int(r[0]) for r in rows}

    def delete_study(self, study: str) -> int:
        c = self.conn.cursor()
        c.execute("DELETE FROM replications WHERE study=?", (study,))
        self.conn.commit()
        return c.rowcount

    def close(self):
        self.conn.close()
