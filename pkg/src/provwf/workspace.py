"""Workspace layout and configuration (``provwf.toml``).

A workspace directory holds everything one dataset's processing produces:
the registry log, draft/approved plans, run reports, and the content store.

    <workspace>/
      provwf.toml          optional configuration
      artifacts.jsonl      the registry (authoritative)
      plans/<id>.json      draft and approved configurations
      runs/<run_id>/...    task workspaces and run_report.json
      derived/             inventory payloads
      store/<xx>/<hash>/   content-addressed payloads
"""

from __future__ import annotations

import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .assembler import APPROVED, Configuration, approve as seal_config
from .contract import Registry
from .errors import ApprovalError, IoError, NotFound
from .executor import RunPaths, STORE_ENV
from .rules import Catalog, load_catalog

CONFIG_NAME = "provwf.toml"
DEFAULT_PORT = 8787


@dataclass
class WorkspaceConfig:
    store_root: str = ""
    port: int = DEFAULT_PORT
    adapter_endpoint: str = ""
    catalog_dir: str = "rules"
    dataset_root: str = "data"
    console_dir: str = ""

    @classmethod
    def load(cls, root: Path) -> "WorkspaceConfig":
        cfg = cls()
        path = root / CONFIG_NAME
        if path.exists():
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
            table = doc.get("provwf", doc)
            cfg.store_root = table.get("store_root", cfg.store_root)
            cfg.port = int(table.get("port", cfg.port))
            cfg.adapter_endpoint = table.get("adapter_endpoint", cfg.adapter_endpoint)
            cfg.catalog_dir = table.get("catalog_dir", cfg.catalog_dir)
            cfg.dataset_root = table.get("dataset_root", cfg.dataset_root)
            cfg.console_dir = table.get("console_dir", cfg.console_dir)
        return cfg


class Workspace:
    def __init__(self, root: str | Path, dataset_root: str | Path | None = None,
                 catalog_dir: str | Path | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config = WorkspaceConfig.load(self.root)
        self._dataset_root = Path(dataset_root) if dataset_root else self._resolve(self.config.dataset_root)
        self._catalog_dir = Path(catalog_dir) if catalog_dir else self._resolve(self.config.catalog_dir)
        self._registry: Registry | None = None
        self._catalog: Catalog | None = None

    def _resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    # -- components ---------------------------------------------------------

    @property
    def registry_path(self) -> Path:
        return self.root / "artifacts.jsonl"

    @property
    def registry(self) -> Registry:
        if self._registry is None:
            self._registry = Registry(self.registry_path)
        return self._registry

    @property
    def catalog(self) -> Catalog:
        if self._catalog is None:
            self._catalog = load_catalog(self._catalog_dir)
        return self._catalog

    @property
    def dataset_root(self) -> Path:
        return self._dataset_root

    @property
    def plans_dir(self) -> Path:
        d = self.root / "plans"
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def derived_dir(self) -> Path:
        d = self.root / "derived"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def run_paths(self) -> RunPaths:
        store = self.config.store_root or os.environ.get(STORE_ENV) or ""
        return RunPaths.create(
            work_root=self.root,
            dataset_root=self._dataset_root,
            store_root=self._resolve(store) if store else None,
        )

    # -- plan persistence -----------------------------------------------------

    def save_plan(self, config: Configuration) -> str:
        plan_id = config.fingerprint[:16]
        path = self.plans_dir / f"{plan_id}.json"
        path.write_text(json.dumps(config.to_record(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return plan_id

    def load_plan(self, plan_id: str) -> Configuration:
        path = self.plans_dir / f"{plan_id}.json"
        if not path.exists():
            matches = sorted(self.plans_dir.glob(f"{plan_id}*.json"))
            if len(matches) != 1:
                raise NotFound(f"no plan '{plan_id}' in {self.plans_dir}")
            path = matches[0]
        return Configuration.from_record(json.loads(path.read_text(encoding="utf-8")))

    def approve_plan(self, plan_id: str) -> Configuration:
        config = self.load_plan(plan_id)
        sealed = seal_config(config)
        self.save_plan(sealed)
        return sealed

    def list_plans(self) -> list[dict[str, str]]:
        out = []
        for path in sorted(self.plans_dir.glob("*.json")):
            rec = json.loads(path.read_text(encoding="utf-8"))
            out.append({
                "plan_id": path.stem,
                "seal": rec.get("seal", ""),
                "target_type": rec.get("goal", {}).get("target_type", ""),
                "tasks": str(len(rec.get("instances", []))),
            })
        return out

    # -- run lock ----------------------------------------------------------------

    @contextmanager
    def run_lock(self):
        """One execution at a time per workspace."""
        runs = self.root / "runs"
        runs.mkdir(parents=True, exist_ok=True)
        lock = runs / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise IoError(f"another run holds the workspace lock ({lock})") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock.unlink(missing_ok=True)

    def require_approved(self, plan_id: str) -> Configuration:
        config = self.load_plan(plan_id)
        if config.seal != APPROVED:
            raise ApprovalError(f"plan '{plan_id}' is not approved")
        return config
