"""Append-only JSONL logs with crash-safe appends and a sidecar key index.

Every record is written as one line followed by flush + fsync under a lock, so a crash
can leave at most one torn final line. On load a torn tail is moved to
``<log>.quarantine`` and truncated away. The sidecar ``<log>.idx`` maps record keys to
byte offsets for random access; it is rebuilt from the log whenever it disagrees.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Callable, Iterator

logger = logging.getLogger(__name__)

KeyFn = Callable[[dict], str]


class JsonlLog:
    def __init__(self, path: str | Path, key: KeyFn):
        self.path = Path(path)
        self.key = key
        self._lock = threading.Lock()
        self._offsets: dict[str, int] = {}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.recover()

    @property
    def index_path(self) -> Path:
        return self.path.with_name(self.path.name + ".idx")

    @property
    def quarantine_path(self) -> Path:
        return self.path.with_name(self.path.name + ".quarantine")

    def recover(self) -> int:
        """Quarantine a torn tail, rebuild offsets; returns the number of valid records."""
        with self._lock:
            self._offsets.clear()
            if not self.path.exists():
                self.path.touch()
            data = self.path.read_bytes()
            good_end = 0
            pos = 0
            while pos < len(data):
                nl = data.find(b"\n", pos)
                if nl < 0:
                    break
                line = data[pos:nl]
                try:
                    rec = json.loads(line)
                except (json.JSONDecodeError, UnicodeDecodeError):
                    break
                if line.strip():
                    self._offsets[self.key(rec)] = pos
                pos = nl + 1
                good_end = pos
            if good_end < len(data):
                torn = data[good_end:]
                logger.warning("%s: quarantining %d bytes of torn/invalid tail", self.path, len(torn))
                with open(self.quarantine_path, "ab") as q:
                    q.write(torn + (b"" if torn.endswith(b"\n") else b"\n"))
                with open(self.path, "r+b") as fh:
                    fh.truncate(good_end)
                    fh.flush()
                    os.fsync(fh.fileno())
            self._write_index()
            return len(self._offsets)

    def _write_index(self) -> None:
        tmp = self.index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._offsets, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.index_path)

    def __contains__(self, key: str) -> bool:
        return key in self._offsets

    def __len__(self) -> int:
        return len(self._offsets)

    def keys(self) -> set[str]:
        return set(self._offsets)

    def append(self, record: dict) -> None:
        line = (json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
        key = self.key(record)
        with self._lock:
            with open(self.path, "ab") as fh:
                offset = fh.tell()
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self._offsets[key] = offset
            with open(self.index_path, "w", encoding="utf-8") as ih:
                json.dump(self._offsets, ih, sort_keys=True)

    def get(self, key: str) -> dict | None:
        off = self._offsets.get(key)
        if off is None:
            return None
        with open(self.path, "rb") as fh:
            fh.seek(off)
            return json.loads(fh.readline())

    def __iter__(self) -> Iterator[dict]:
        """Latest record per key, in key order."""
        for key in sorted(self._offsets):
            yield self.get(key)

    def records(self) -> list[dict]:
        return list(self)
