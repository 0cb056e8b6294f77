"""
Append-only training log.
One JSON line per optimizer step, fsynced before the step is reported.
Entries carry the number of completed steps at the time they were written,
so a checkpoint at step k covers exactly the entries with step <= k.
On resume the log is truncated to the checkpoint step and replayed.
"""

import fcntl
import json
import os
import threading
import time


class TrainLog:
    def __init__(self, log_path="run/train_log.jsonl"):
        self.log_path = log_path
        self._lock = threading.Lock()

        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        if not os.path.exists(log_path):
            open(log_path, 'w').close()

    def append(self, step: int, stage: str, **values) -> dict:
        entry = {"step": int(step), "stage": stage, "ts": time.time()}
        entry.update(values)

        with self._lock:
            with open(self.log_path, 'a') as f:
                fcntl.flock(f.fileno(), fcntl.LOCK_EX)
                f.write(json.dumps(entry) + "\n")
                f.flush()
                os.fsync(f.fileno())
                fcntl.flock(f.fileno(), fcntl.LOCK_UN)
        return entry

    def replay(self, kind: str = None) -> list:
        """All readable entries, optionally only those with entry['kind'] == kind."""
        entries = []
        if not os.path.exists(self.log_path):
            return entries

        with self._lock:
            with open(self.log_path, 'r') as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn final line after a crash
                    if kind is None or entry.get("kind") == kind:
                        entries.append(entry)
        return entries

    def truncate_after(self, step: int) -> int:
        """Drop entries newer than `step`; returns how many were kept."""
        kept = [e for e in self.replay() if e.get("step", 0) <= step]
        tmp_path = self.log_path + ".tmp"
        with self._lock:
            with open(tmp_path, 'w') as f:
                for entry in kept:
                    f.write(json.dumps(entry) + "\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, self.log_path)
        return len(kept)

    def clear(self):
        with self._lock:
            with open(self.log_path, 'w') as f:
                f.flush()
                os.fsync(f.fileno())
