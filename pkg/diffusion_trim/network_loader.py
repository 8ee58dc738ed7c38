"""
Loading of village networks, outcome data and village manifests.
"""

import json
import logging
import os
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from diffusion_trim.config import VILLAGES_DIR
from diffusion_trim.errors import InputError
from diffusion_trim.model import InfoScenario, OutcomeMatrix, SeedVector, Village, VillageNetwork

logger = logging.getLogger(__name__)

MANIFEST_NAME = "villages.json"


def _read_rows(path: str) -> List[Tuple[int, List[str]]]:
    """Non-empty comma- or whitespace-separated rows with their 1-based line numbers."""
    if not os.path.exists(path):
        raise InputError(f"file not found: {path}", path=path)
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            cells = [c for c in line.replace(",", " ").replace(";", " ").split() if c]
            rows.append((number, cells))
    if not rows:
        raise InputError(f"{path} is empty", path=path)
    return rows


def _is_dense(rows: List[Tuple[int, List[str]]]) -> bool:
    size = len(rows)
    return all(len(cells) == size and all(c in ("0", "1") for c in cells) for _, cells in rows)


def _parse_int(cell: str, path: str, line: int) -> int:
    try:
        return int(cell)
    except ValueError:
        raise InputError(f"{path}:{line}: expected an integer, got {cell!r}", path=path, line=line) from None


def load_network(path: str, fmt: str = "auto", n: Optional[int] = None) -> VillageNetwork:
    """
    Load a village network.

    Args:
        path: Dense 0/1 matrix or two-column edge list (1-based node ids, optional header)
        fmt: "dense", "edges" or "auto" (a square 0/1 table is dense)
        n: Node count for edge lists; defaults to the largest node id

    Returns:
        VillageNetwork; edge lists are symmetrised, dense input must already be symmetric
    """
    rows = _read_rows(path)
    if fmt == "auto":
        fmt = "dense" if _is_dense(rows) else "edges"
    if fmt == "dense":
        size = len(rows)
        matrix = np.zeros((size, size), dtype=np.uint8)
        for i, (line, cells) in enumerate(rows):
            if len(cells) != size:
                raise InputError(f"{path}:{line}: expected {size} entries, got {len(cells)}", path=path, line=line)
            for j, cell in enumerate(cells):
                value = _parse_int(cell, path, line)
                if value not in (0, 1):
                    raise InputError(f"{path}:{line}: entry {value} is not 0 or 1", path=path, line=line)
                matrix[i, j] = value
        network = VillageNetwork(matrix)
    elif fmt == "edges":
        if not all(c.lstrip("-").isdigit() for c in rows[0][1]):
            rows = rows[1:]  # header
        edges = []
        for line, cells in rows:
            if len(cells) != 2:
                raise InputError(f"{path}:{line}: expected 2 node ids, got {len(cells)}", path=path, line=line)
            i, j = (_parse_int(c, path, line) for c in cells)
            if i < 1 or j < 1:
                raise InputError(f"{path}:{line}: node ids are 1-based", path=path, line=line)
            edges.append((i - 1, j - 1))
        size = n if n is not None else max((max(e) for e in edges), default=-1) + 1
        network = VillageNetwork.from_edges(size, edges)
    else:
        raise InputError(f"unknown network format {fmt!r}")
    logger.debug("Loaded %s network with %d nodes from %s", fmt, network.n, path)
    return network


def load_outcomes(path: str, periods: Optional[int] = None) -> Tuple[SeedVector, OutcomeMatrix]:
    """
    Load injection points and outcomes from a ``node,ip,y1..yT`` CSV.

    Rows are sorted by node id; ``periods`` keeps only the first columns.
    """
    frame = _read_table(path, "ip", "y")
    y_columns = _numbered_columns(frame, "y", path)
    if periods is not None:
        if periods > len(y_columns):
            raise InputError(f"{path} has {len(y_columns)} periods, {periods} requested", path=path)
        y_columns = y_columns[:periods]
    return SeedVector(frame["ip"].to_numpy()), OutcomeMatrix(frame[y_columns].to_numpy())


def load_scenario(path: str) -> InfoScenario:
    """Load a latent information scenario from a ``node,s1..s{T-1}`` CSV."""
    frame = _read_table(path, None, "s")
    return InfoScenario(frame[_numbered_columns(frame, "s", path)].to_numpy())


def _read_table(path: str, required: Optional[str], prefix: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise InputError(f"file not found: {path}", path=path)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"{path}: {e}", path=path) from None
    missing = [c for c in ("node", required) if c and c not in frame.columns]
    if missing:
        raise InputError(f"{path} lacks column(s) {', '.join(missing)}", path=path)
    if frame.isna().any().any():
        row = int(frame.isna().any(axis=1).to_numpy().argmax())
        raise InputError(f"{path}:{row + 2}: missing value", path=path, line=row + 2)
    frame = frame.sort_values("node").reset_index(drop=True)
    if list(frame["node"]) != list(range(1, len(frame) + 1)):
        raise InputError(f"{path}: node ids must be 1..{len(frame)}", path=path)
    return frame


def _numbered_columns(frame: pd.DataFrame, prefix: str, path: str) -> List[str]:
    columns = []
    while f"{prefix}{len(columns) + 1}" in frame.columns:
        columns.append(f"{prefix}{len(columns) + 1}")
    if prefix == "y" and not columns:
        raise InputError(f"{path} has no {prefix}1 column", path=path)
    return columns


class VillageLoader:
    """Loads the villages listed in a ``villages.json`` manifest."""

    def __init__(self, base_dir: Optional[str] = None):
        self.base_dir = base_dir or VILLAGES_DIR

    def _path(self, name: str) -> str:
        return name if os.path.isabs(name) else os.path.join(self.base_dir, name)

    def manifest_entries(self, manifest: Optional[str] = None) -> List[dict]:
        path = self._path(manifest or MANIFEST_NAME)
        if not os.path.exists(path):
            raise InputError(f"manifest not found: {path}", path=path)
        with open(path, "r", encoding="utf-8") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{e.lineno}: {e.msg}", path=path, line=e.lineno) from None
        entries = payload.get("villages")
        if not isinstance(entries, list) or not entries:
            raise InputError(f"{path} lists no villages", path=path)
        return entries

    def load_village(self, entry: dict, periods: Optional[int] = None) -> Village:
        for key in ("name", "network", "outcomes"):
            if key not in entry:
                raise InputError(f"manifest entry lacks {key!r}: {entry}")
        network = load_network(self._path(entry["network"]), entry.get("format", "auto"), entry.get("n"))
        seeds, outcomes = load_outcomes(self._path(entry["outcomes"]), periods)
        return Village(entry["name"], network, seeds, outcomes)

    def load_villages(self, manifest: Optional[str] = None, periods: Optional[int] = None,
                      names: Optional[List[str]] = None) -> List[Village]:
        """
        Load every village of a manifest, optionally only the named ones.

        Args:
            manifest: Manifest file, relative to the base directory
            periods: Truncate outcome data to this many periods
            names: Village names to keep, in manifest order

        Returns:
            Validated villages
        """
        entries = self.manifest_entries(manifest)
        if names:
            unknown = set(names).difference(e.get("name") for e in entries)
            if unknown:
                raise InputError(f"villages not in manifest: {', '.join(sorted(unknown))}")
            entries = [e for e in entries if e["name"] in names]
        villages = [self.load_village(entry, periods) for entry in entries]
        logger.info("Loaded %d village(s) from %s", len(villages), self.base_dir)
        return villages

    def load_scenarios(self, manifest: Optional[str] = None) -> List[Optional[InfoScenario]]:
        return [load_scenario(self._path(e["scenario"])) if e.get("scenario") else None
                for e in self.manifest_entries(manifest)]
