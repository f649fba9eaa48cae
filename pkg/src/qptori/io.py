"""Deterministic file formats: solution JSON, CSV tables, model files.

Numbers are printed with 17 significant digits, which round-trips binary64
exactly; identical configs therefore produce byte-identical CSV output.
Every file carries a header block (comment lines in CSV, a ``meta`` object
in JSON) with the resolved configuration and the library version, and no
timestamps, so reruns stay comparable.

Mode indices are 0-based in every file.
"""

from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from . import __version__
from .hamiltonian import ModelSpec, model_from_dict, model_to_dict
from .lattice import FourierVector, centered_box, norm_inf


def fmt(value) -> str:
    """17-significant-digit rendering; exact round trip for binary64."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path, columns: list[str], rows: Iterable[Iterable], meta: dict | None = None) -> None:
    lines = []
    for key in sorted((meta or {}).keys()):
        lines.append(f"# {key}: {(meta or {})[key]}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    meta: dict = {}
    columns: list[str] = []
    rows: list[list[str]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, val = body.split(":", 1)
                    meta[key.strip()] = val.strip()
                continue
            if not columns:
                columns = line.split(",")
            else:
                rows.append(line.split(","))
    return meta, columns, rows


def coefficient_rows(vec: FourierVector) -> list[list]:
    """Flat (mode, k_1..k_m, value) rows; exact zeros are omitted (sites not
    listed are zero by convention)."""
    rows = []
    for site in vec.nonzero_sites():
        rows.append([site.mode, *site.index, vec.get(site.mode, site.index)])
    return rows


def vector_from_rows(m: int, n: int, rows: Iterable) -> FourierVector:
    entries = []
    radius = 1
    for row in rows:
        mode = int(row[0])
        k = tuple(int(v) for v in row[1 : 1 + m])
        value = float(row[1 + m])
        radius = max(radius, norm_inf(k))
        entries.append((mode, k, value))
    vec = FourierVector(n, centered_box(m, radius))
    for mode, k, value in entries:
        vec.set(mode, k, value)
    return FourierVector(n, vec.support, vec.values)


def solution_meta(config_dict: dict) -> dict:
    return {"library": "qptori", "version": __version__, "config": config_dict}


def save_solution(path, model: ModelSpec, omega_star, zhat: FourierVector, info: dict, config_dict: dict) -> None:
    payload = {
        "meta": solution_meta(config_dict),
        "model": model_to_dict(model),
        "omega_T_star": [float(f"{w:.17g}") for w in np.asarray(omega_star, dtype=float)],
        "support_radius": zhat.support.radius,
        "info": info,
        "coefficients": [
            {"mode": mode_k_v[0], "k": list(mode_k_v[1:-1]), "value": float(f"{mode_k_v[-1]:.17g}")}
            for mode_k_v in coefficient_rows(zhat)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_solution(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    model = model_from_dict(data["model"])
    rows = [[c["mode"], *c["k"], c["value"]] for c in data["coefficients"]]
    radius = max(int(data.get("support_radius", 1)), 1)
    vec = vector_from_rows(model.m, model.n, rows)
    if vec.support.radius < radius:
        from .lattice import project

        vec = project(vec, centered_box(model.m, radius))
    return {
        "model": model,
        "omega_T_star": np.asarray(data["omega_T_star"], dtype=float),
        "zhat": vec,
        "meta": data.get("meta", {}),
        "info": data.get("info", {}),
    }


def convergence_rows(history) -> tuple[list[str], list[list]]:
    columns = [
        "r",
        "N",
        "norm_F",
        "step_norm",
        "freq_step",
        "state_step_t10",
        "gevrey_s",
        "inverse_norm",
        "localization_ok",
        "drift",
        "drift_bound",
    ]
    rows = [
        [
            rec.r,
            rec.N,
            rec.norm_F,
            rec.step_norm,
            rec.freq_step,
            rec.state_step_at_t,
            rec.gevrey_s,
            rec.inverse_norm,
            rec.localization_ok,
            rec.drift,
            rec.drift_bound,
        ]
        for rec in history
    ]
    return columns, rows


def conditions_rows(conditions: list[dict], m: int) -> tuple[list[str], list[list]]:
    k_cols = [f"worst_row_k{i+1}" for i in range(m)] + [f"worst_col_k{i+1}" for i in range(m)]
    columns = [
        "r",
        "N",
        "dim",
        "s",
        "inverse_norm",
        "log_inverse_norm",
        "log_inverse_threshold",
        "inversion_ok",
        "localization_ok",
        "worst_row_mode",
        *k_cols[:m],
        "worst_col_mode",
        *k_cols[m:],
        "worst_distance",
        "worst_entry",
        "worst_bound",
    ]
    rows = []
    for c in conditions:
        wp = c.get("worst_pair") or {}
        row_site = wp.get("row")
        col_site = wp.get("col")
        rows.append(
            [
                c.get("r", -1),
                c["N"],
                c["dim"],
                c.get("s", ""),
                c.get("inverse_norm", ""),
                c.get("log_inverse_norm", ""),
                c.get("log_inverse_threshold", ""),
                c.get("inversion_ok", ""),
                c.get("localization_ok", ""),
                row_site.mode if row_site else "",
                *(row_site.index if row_site else [""] * m),
                col_site.mode if col_site else "",
                *(col_site.index if col_site else [""] * m),
                wp.get("distance", ""),
                wp.get("entry", ""),
                wp.get("bound", ""),
            ]
        )
    return columns, rows


def trajectory_rows(traj, residuals=None) -> tuple[list[str], list[list]]:
    n = traj.states.shape[1]
    columns = ["t"]
    for j in range(n):
        columns += [f"x{j}", f"y{j}"]
    columns.append("residual")
    rows = []
    for i, t in enumerate(traj.times):
        row = [t]
        for j in range(n):
            row += [traj.coords[i, j, 0], traj.coords[i, j, 1]]
        row.append(residuals[i] if residuals is not None else 0.0)
        rows.append(row)
    return columns, rows
