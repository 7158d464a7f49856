"""JSON/CSV loaders and writers for markets, trees, schedules and certificates."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import numpy as np

from .duality import DualCertificate
from .market import MarketSpec
from .strategy import TradeSchedule
from .tree import NodeMeasure, ScenarioTree


class FormatError(Exception):
    """Input file failed to parse or does not match the documented schema."""


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object at the top level")
    return data


def market_from_dict(data: dict) -> MarketSpec:
    try:
        return MarketSpec.build(
            data["grid"],
            data["delta"],
            data["r"],
            iota=float(data.get("iota", 0.0)),
            zeta0=float(data.get("zeta0", 0.0)),
            x0=float(data.get("x0", 0.0)),
            xi0=float(data.get("xi0", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad market spec: {exc}") from exc


def load_market(path) -> MarketSpec:
    return market_from_dict(_read_json(path))


def load_tree(path, market: MarketSpec | None = None) -> ScenarioTree:
    """Tree file: ``{"levels": L, "nodes": [{id, parent, p_transition, P[, delta, r]}]}``.

    Times and default liquidity come from the market when given; otherwise the
    file must carry a ``"times"`` array and per-node depth/resilience.
    """
    data = _read_json(path)
    try:
        nodes = data["nodes"]
        if market is not None:
            times = market.grid.times
            default_delta, default_r = market.liquidity.delta, market.liquidity.r
        else:
            times = data["times"]
            default_delta = default_r = None
        tree = ScenarioTree.from_node_dicts(times, nodes, default_delta, default_r)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"bad tree file: {exc}") from exc
    if "levels" in data and int(data["levels"]) != tree.n_levels:
        raise FormatError(f"tree file declares {data['levels']} levels but has {tree.n_levels}")
    return tree


def load_schedule(path, x0_default: float = 0.0) -> TradeSchedule:
    data = _read_json(path)
    try:
        return TradeSchedule(
            np.asarray(data["buys"], dtype=float),
            np.asarray(data["sells"], dtype=float),
            float(data.get("x0", x0_default)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad strategy file: {exc}") from exc


def load_certificate(path, tree: ScenarioTree) -> DualCertificate:
    data = _read_json(path)
    try:
        q = NodeMeasure.for_tree(tree, np.asarray(data["q_transitions"], dtype=float))
        M = np.asarray(data["M"], dtype=float)
        alpha = data.get("alpha")
        alpha = None if alpha is None else np.asarray(alpha, dtype=float)
        return DualCertificate(q=q, M=M, alpha=alpha)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad certificate file: {exc}") from exc


def load_payoff(path, tree: ScenarioTree) -> np.ndarray:
    """Payoff file: ``{"type": "call", "strike": k}`` or ``{"type": "values", "values": [...]}``.

    Explicit values are listed per leaf in increasing node-id order.
    """
    data = _read_json(path)
    kind = data.get("type", "values")
    if kind == "call":
        try:
            strike = float(data["strike"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad payoff file: {exc}") from exc
        return np.maximum(tree.P[tree.leaves] - strike, 0.0)
    if kind == "values":
        values = np.asarray(data.get("values"), dtype=float)
        if values.shape != (tree.leaves.size,):
            raise FormatError(f"payoff must list {tree.leaves.size} leaf values")
        return values
    raise FormatError(f"unknown payoff type {kind!r}")


def load_price_paths(path) -> np.ndarray:
    """CSV with one column per scenario; returns scenario rows ``(S, N+1)``."""
    rows: list[list[float]] = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for line_no, row in enumerate(csv.reader(fh)):
                if not row:
                    continue
                try:
                    rows.append([float(cell) for cell in row])
                except ValueError:
                    if line_no == 0:
                        continue  # header
                    raise FormatError(f"{path}: non-numeric value on line {line_no + 1}")
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise FormatError(f"{path}: need a rectangular numeric table")
    return np.asarray(rows, dtype=float).T


def jsonify(obj):
    """Recursively convert report objects into JSON-serialisable values."""
    if isinstance(obj, dict):
        return {str(k): jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    if hasattr(obj, "__dataclass_fields__"):
        return {k: jsonify(getattr(obj, k)) for k in obj.__dataclass_fields__}
    return str(obj)


def dump_json(obj, stream) -> None:
    json.dump(jsonify(obj), stream, indent=2, sort_keys=True)
    stream.write("\n")


def write_node_series_csv(tree: ScenarioTree, columns: dict[str, np.ndarray], stream) -> None:
    """Per-node series (price, martingale, bound, ...) for external plotting."""
    writer = csv.writer(stream, lineterminator="\n")
    names = list(columns)
    writer.writerow(["node", "parent", "t_index", "time"] + names)
    for node in range(tree.n_nodes):
        row = [node, int(tree.parent[node]), int(tree.t_index[node]), repr(float(tree.times[tree.t_index[node]]))]
        row += [repr(float(columns[name][node])) for name in names]
        writer.writerow(row)


def schedule_to_dict(schedule: TradeSchedule) -> dict:
    return {"buys": schedule.buys, "sells": schedule.sells, "x0": schedule.x0}


def certificate_to_dict(cert: DualCertificate) -> dict:
    return {
        "q_transitions": cert.q.transitions,
        "M": cert.M,
        "alpha": cert.alpha,
    }


def write_text(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
