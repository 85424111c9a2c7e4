"""Model JSON, edge-list and positions files."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .graphon import Network, SbsgmModel


class InputError(ValueError):
    """Malformed input file; the message names the offending line or field."""


def model_to_dict(model: SbsgmModel) -> dict:
    return {
        "K": model.K,
        "zeta": [float(z) for z in model.zeta],
        "knots": [[float(t) for t in tau] for tau in model.knots],
        "gamma": [float(g) for g in model.gamma],
        "gamma_layout": "blocks (1,1),(1,2),...,(K,K); each L_k x L_l, row-major",
    }


def model_from_dict(data: dict, source: str = "<model>") -> SbsgmModel:
    for key in ("K", "zeta", "knots", "gamma"):
        if key not in data:
            raise InputError(f"{source}: missing field '{key}'")
    K = data["K"]
    if not isinstance(K, int) or K < 1:
        raise InputError(f"{source}: field 'K' must be a positive integer, got {K!r}")
    if len(data["zeta"]) != K + 1:
        raise InputError(f"{source}: field 'zeta' must have K+1={K + 1} entries, got {len(data['zeta'])}")
    if len(data["knots"]) != K:
        raise InputError(f"{source}: field 'knots' must have K={K} vectors, got {len(data['knots'])}")
    try:
        return SbsgmModel(
            np.array(data["zeta"], dtype=float),
            tuple(np.array(t, dtype=float) for t in data["knots"]),
            np.array(data["gamma"], dtype=float),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: {exc}") from exc


def dumps_model(model: SbsgmModel) -> str:
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def save_model(model: SbsgmModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> SbsgmModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: top-level JSON value must be an object")
    return model_from_dict(data, str(path))


_NODES_HEADER = re.compile(r"#\s*nodes\s*[:=]?\s*(\d+)", re.IGNORECASE)


def write_edge_list(net: Network, path, index_base: int = 0) -> None:
    lines = [f"# nodes: {net.N}"]
    lines += [f"{i + index_base} {j + index_base}" for i, j in net.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path, index_base: int = 0, n_nodes: int | None = None) -> Network:
    """Parse whitespace separated ``i j`` lines.

    Lines starting with ``#`` are comments; a ``# nodes: N`` comment fixes the
    node count (otherwise the largest index determines it). Self-loops and
    duplicate edges are rejected with their line numbers.
    """
    if index_base not in (0, 1):
        raise InputError("index base must be 0 or 1")
    path = Path(path)
    seen: dict[tuple[int, int], int] = {}
    header_n = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _NODES_HEADER.match(line)
            if m:
                header_n = int(m.group(1))
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected two node indices, got {line!r}")
        try:
            i, j = (int(x) - index_base for x in parts)
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: node indices must be integers, got {line!r}") from exc
        if i < 0 or j < 0:
            raise InputError(f"{path}:{lineno}: node index below base {index_base}")
        if i == j:
            raise InputError(f"{path}:{lineno}: self-loop on node {i + index_base}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InputError(f"{path}:{lineno}: duplicate edge {parts[0]} {parts[1]} (first seen on line {seen[key]})")
        seen[key] = lineno
    edges = np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
    largest = int(edges.max()) + 1 if edges.size else 0
    N = n_nodes if n_nodes is not None else header_n if header_n is not None else largest
    if N < largest:
        raise InputError(f"{path}: node count {N} smaller than largest index {largest - 1 + index_base}")
    if N < 1:
        raise InputError(f"{path}: empty network")
    return Network(N, edges)


def write_positions(path, u, labels=None, index_base: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "u"] + (["community"] if labels is not None else []))
        for i, ui in enumerate(u):
            row = [i + index_base, repr(float(ui))]
            if labels is not None:
                row.append(int(labels[i]) + 1)
            w.writerow(row)


def read_positions(path, index_base: int = 0) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "u" not in reader.fieldnames:
            raise InputError(f"{path}: positions file needs a 'u' column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["node"]) - index_base, float(row["u"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: malformed row {row}") from exc
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise InputError(f"{path}: node ids must cover 0..N-1 exactly once")
    return np.array([r[1] for r in rows])


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
