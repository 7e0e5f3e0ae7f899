"""Versioned report stores with a fetch-latest-commit-then-push protocol.

Two observationally equivalent implementations:

* JournalStore: a ``files/`` directory plus ``journal.ndjson`` holding one
  commit record per line. Dependency-free, diffable, deterministic.
* GitStore: a git working tree, shelling out to the installed git binary.

``put`` reads the latest commit id, then writes a new commit with that
parent; if another writer moved the head in between, it refetches and
retries up to 3 times before giving up.
"""
from __future__ import annotations

import hashlib
import json
import subprocess
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from cti_forge.errors import CtiForgeError
from cti_forge.model import validate_file_name

PUT_RETRIES = 3


class StoreError(CtiForgeError):
    pass


class StoreUnavailable(StoreError):
    pass


class Conflict(StoreError):
    pass


class UnknownRef(StoreError):
    def __init__(self, ref_id: str):
        self.ref_id = ref_id
        super().__init__(f"unknown commit ref {ref_id!r}")


@dataclass(frozen=True)
class CommitRef:
    id: str
    parent: str | None
    files: tuple[str, ...]
    message: str
    timestamp: datetime


class ReportStore(ABC):
    """Contract shared by all store implementations.

    Mutations are serialized per handle; reads may run concurrently.
    A hook between head-read and commit-write (``race_hook``) exists so
    tests can inject a concurrent writer.
    """

    race_hook: Callable[[], None] | None = None

    @abstractmethod
    def exists(self, name: str) -> bool: ...

    @abstractmethod
    def latest_commit(self) -> CommitRef | None: ...

    @abstractmethod
    def put(self, name: str, content: bytes, message: str) -> CommitRef: ...

    @abstractmethod
    def list_commits_since(self, ref: CommitRef | None = None) -> list[CommitRef]: ...

    @abstractmethod
    def read(self, name: str) -> bytes: ...


def _utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


class JournalStore(ReportStore):
    """Append-only NDJSON commit journal over a flat file directory."""

    def __init__(self, root: str | Path, create: bool = False):
        self.root = Path(root)
        self._lock = threading.Lock()
        if create:
            (self.root / "files").mkdir(parents=True, exist_ok=True)
            self._journal_path.touch()

    @property
    def _journal_path(self) -> Path:
        return self.root / "journal.ndjson"

    @property
    def _files_dir(self) -> Path:
        return self.root / "files"

    def _check_layout(self) -> None:
        if not self._journal_path.is_file() or not self._files_dir.is_dir():
            raise StoreUnavailable(f"no journal store at {self.root}")

    def _read_journal(self) -> list[CommitRef]:
        self._check_layout()
        commits = []
        for line in self._journal_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            commits.append(
                CommitRef(
                    id=rec["id"],
                    parent=rec["parent"],
                    files=tuple(rec["files"]),
                    message=rec["message"],
                    timestamp=datetime.fromisoformat(rec["timestamp"]),
                )
            )
        return commits

    def exists(self, name: str) -> bool:
        self._check_layout()
        return (self._files_dir / name).is_file()

    def read(self, name: str) -> bytes:
        self._check_layout()
        path = self._files_dir / name
        if not path.is_file():
            raise StoreUnavailable(f"{name} is not in the store")
        return path.read_bytes()

    def latest_commit(self) -> CommitRef | None:
        commits = self._read_journal()
        return commits[-1] if commits else None

    def list_commits_since(self, ref: CommitRef | None = None) -> list[CommitRef]:
        commits = self._read_journal()
        if ref is None:
            return commits
        for i, commit in enumerate(commits):
            if commit.id == ref.id:
                return commits[i + 1 :]
        raise UnknownRef(ref.id)

    @staticmethod
    def _commit_id(parent: str | None, file_digests: list[str], message: str) -> str:
        payload = "\n".join([parent or "", *sorted(file_digests), message])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def put(self, name: str, content: bytes, message: str) -> CommitRef:
        validate_file_name(name)
        self._check_layout()
        for _ in range(PUT_RETRIES + 1):
            head = self.latest_commit()
            parent = head.id if head else None
            if self.race_hook is not None:
                self.race_hook()
            with self._lock:
                current = self.latest_commit()
                current_id = current.id if current else None
                if current_id != parent:
                    continue
                digest = f"{name}:{hashlib.sha256(content).hexdigest()}"
                commit = CommitRef(
                    id=self._commit_id(parent, [digest], message),
                    parent=parent,
                    files=(name,),
                    message=message,
                    timestamp=_utc_now(),
                )
                (self._files_dir / name).write_bytes(content)
                record = json.dumps(
                    {
                        "id": commit.id,
                        "parent": commit.parent,
                        "files": list(commit.files),
                        "message": commit.message,
                        "timestamp": commit.timestamp.isoformat(),
                    }
                )
                with self._journal_path.open("a", encoding="utf-8") as f:
                    f.write(record + "\n")
                return commit
        raise Conflict(f"head moved {PUT_RETRIES} times while writing {name}")


class GitStore(ReportStore):
    """Report store backed by a git working tree."""

    def __init__(self, root: str | Path, create: bool = False):
        self.root = Path(root)
        self._lock = threading.Lock()
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
            if not (self.root / ".git").exists():
                self._git("init", "--quiet", check_layout=False)
                self._git("config", "user.name", "cti-forge", check_layout=False)
                self._git(
                    "config", "user.email", "cti-forge@localhost", check_layout=False
                )

    def _git(self, *args: str, check_layout: bool = True) -> str:
        if check_layout and not (self.root / ".git").exists():
            raise StoreUnavailable(f"no git store at {self.root}")
        proc = subprocess.run(
            ["git", "-C", str(self.root), *args],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise StoreError(
                f"git {' '.join(args)} failed: {proc.stderr.strip() or proc.stdout.strip()}"
            )
        return proc.stdout

    def _head(self) -> str | None:
        try:
            return self._git("rev-parse", "HEAD").strip()
        except StoreError:
            return None

    def _commit_ref(self, commit_id: str) -> CommitRef:
        out = self._git(
            "show", "--no-patch", "--format=%H%x00%P%x00%cI%x00%s", commit_id
        )
        commit_hash, parents, stamp, subject = out.strip().split("\x00")
        files_out = self._git(
            "diff-tree", "--no-commit-id", "--name-only", "-r", "--root", commit_id
        )
        files = tuple(line for line in files_out.splitlines() if line)
        return CommitRef(
            id=commit_hash,
            parent=parents.split()[0] if parents else None,
            files=files,
            message=subject,
            timestamp=datetime.fromisoformat(stamp),
        )

    def exists(self, name: str) -> bool:
        if not (self.root / ".git").exists():
            raise StoreUnavailable(f"no git store at {self.root}")
        if self._head() is None:
            return False
        listed = self._git("ls-tree", "--name-only", "HEAD")
        return name in listed.splitlines()

    def read(self, name: str) -> bytes:
        if not self.exists(name):
            raise StoreUnavailable(f"{name} is not in the store")
        proc = subprocess.run(
            ["git", "-C", str(self.root), "cat-file", "blob", f"HEAD:{name}"],
            capture_output=True,
        )
        if proc.returncode != 0:
            raise StoreError(f"cannot read {name}: {proc.stderr.decode().strip()}")
        return proc.stdout

    def latest_commit(self) -> CommitRef | None:
        if not (self.root / ".git").exists():
            raise StoreUnavailable(f"no git store at {self.root}")
        head = self._head()
        return self._commit_ref(head) if head else None

    def list_commits_since(self, ref: CommitRef | None = None) -> list[CommitRef]:
        if not (self.root / ".git").exists():
            raise StoreUnavailable(f"no git store at {self.root}")
        if self._head() is None:
            if ref is not None:
                raise UnknownRef(ref.id)
            return []
        if ref is None:
            span = "HEAD"
        else:
            probe = subprocess.run(
                ["git", "-C", str(self.root), "cat-file", "-e", f"{ref.id}^{{commit}}"],
                capture_output=True,
            )
            if probe.returncode != 0:
                raise UnknownRef(ref.id)
            span = f"{ref.id}..HEAD"
        out = self._git("rev-list", "--reverse", span)
        return [self._commit_ref(line) for line in out.splitlines() if line]

    def put(self, name: str, content: bytes, message: str) -> CommitRef:
        validate_file_name(name)
        if not (self.root / ".git").exists():
            raise StoreUnavailable(f"no git store at {self.root}")
        for _ in range(PUT_RETRIES + 1):
            parent = self._head()
            if self.race_hook is not None:
                self.race_hook()
            with self._lock:
                if self._head() != parent:
                    continue
                (self.root / name).write_bytes(content)
                self._git("add", "--", name)
                self._git("commit", "--quiet", "--allow-empty", "-m", message)
                return self._commit_ref(self._head())
        raise Conflict(f"head moved {PUT_RETRIES} times while writing {name}")


def open_store(path: str | Path, kind: str = "journal", create: bool = False) -> ReportStore:
    """Open (or create) a store of the given kind at path."""
    if kind == "journal":
        return JournalStore(path, create=create)
    if kind == "git":
        return GitStore(path, create=create)
    raise ValueError(f"unknown store kind {kind!r}")
