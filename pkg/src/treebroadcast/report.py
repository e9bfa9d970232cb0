"""Structured output: CSV/JSON writers, schema checks, figures, run metadata.

Primary data files are byte-identical for a fixed (config, seed, threads);
wall-clock and environment go to a separate .meta.json sidecar.  Floats are
printed with 17 significant digits so text round-trips are exact.
"""

from __future__ import annotations

import json
import os
import platform
import sys
import time

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def fmt_float(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: str, columns: list[str], rows: list) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


class _Float17(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def dump_json(obj) -> str:
    return json.dumps(obj, cls=_Float17, sort_keys=True, indent=2)


def write_json(path: str, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dump_json(obj))
        fh.write("\n")


def write_json_lines(path: str, objs) -> None:
    with open(path, "w", newline="\n") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, cls=_Float17, sort_keys=True))
            fh.write("\n")


def write_metadata(primary_path: str, argv: list[str], threads: int, seconds: float) -> None:
    """Run metadata kept out of the primary file so reruns stay byte-identical."""
    meta = {
        "argv": argv,
        "threads": threads,
        "wall_clock_seconds": seconds,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
    }
    with open(primary_path + ".meta.json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# minimal JSON-schema validation (type / required / properties / items / enum)


def validate_json(obj, schema, path="$") -> list[str]:
    errors = []
    typ = schema.get("type")
    if typ:
        ok = {
            "object": lambda o: isinstance(o, dict),
            "array": lambda o: isinstance(o, list),
            "string": lambda o: isinstance(o, str),
            "number": lambda o: isinstance(o, (int, float)) and not isinstance(o, bool),
            "integer": lambda o: isinstance(o, int) and not isinstance(o, bool),
            "boolean": lambda o: isinstance(o, bool),
            "null": lambda o: o is None,
        }
        types = typ if isinstance(typ, list) else [typ]
        if not any(ok[t](obj) for t in types):
            errors.append(f"{path}: expected {typ}, got {type(obj).__name__}")
            return errors
    if "enum" in schema and obj not in schema["enum"]:
        errors.append(f"{path}: {obj!r} not in {schema['enum']}")
    if isinstance(obj, dict):
        for key in schema.get("required", []):
            if key not in obj:
                errors.append(f"{path}: missing required key {key!r}")
        for key, sub in schema.get("properties", {}).items():
            if key in obj:
                errors.extend(validate_json(obj[key], sub, f"{path}.{key}"))
    if isinstance(obj, list) and "items" in schema:
        for k, item in enumerate(obj):
            errors.extend(validate_json(item, schema["items"], f"{path}[{k}]"))
    return errors


def load_schema(name: str) -> dict:
    pkg_dir = os.path.dirname(os.path.abspath(__file__))
    repo_docs = os.path.join(os.path.dirname(os.path.dirname(pkg_dir)), "docs", "schemas")
    for root in (repo_docs, os.path.join(pkg_dir, "schemas")):
        cand = os.path.join(root, name + ".schema.json")
        if os.path.exists(cand):
            with open(cand) as fh:
                return json.load(fh)
    raise FileNotFoundError(f"schema {name!r} not found")


# ---------------------------------------------------------------------------
# figures


def _finish(fig, out_png: str) -> None:
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)


def plot_magnetization(stats: list, params_label: str, out_png: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ns = [s.n for s in stats]
    xs = [s.x for s in stats]
    es = [3 * s.x_se for s in stats]
    ax.errorbar(ns, xs, yerr=es, marker="o", capsize=3, label=r"$\hat{x}_n \pm 3\,$SE")
    ax.set_xlabel("depth n")
    ax.set_ylabel("magnetization")
    ax.set_title(params_label)
    if all(x > 0 for x in xs):
        ax.set_yscale("log")
    ax.legend()
    _finish(fig, out_png)


def plot_gq(points: list, out_png: str) -> None:
    """points: (s, estimate, se) triples."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ss = [p[0] for p in points]
    gs = [p[1] for p in points]
    es = [3 * p[2] for p in points]
    ax.errorbar(ss, gs, yerr=es, marker="o", capsize=3, label=r"$\hat{g}_q(s)$")
    ax.plot(ss, ss, linestyle="--", color="gray", label="identity")
    ax.set_xlabel("s")
    ax.set_ylabel("g(s)")
    ax.legend()
    _finish(fig, out_png)


def plot_certify_table(rows: list, out_png: str) -> None:
    """rows: dicts with s, upper_hi, pass."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ss = [r["s"] for r in rows]
    margins = [r["s"] - r["upper_hi"] for r in rows]
    colors = ["tab:green" if r["pass"] else "tab:red" for r in rows]
    ax.scatter(ss, margins, c=colors, s=18)
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xlabel("s")
    ax.set_ylabel("certified margin  s − upper bound")
    _finish(fig, out_png)


def plot_threshold(report: dict, g4_curve: list, out_png: str) -> None:
    """g4_curve: (d, g4_at_minus) pairs around d_star."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ds = [p[0] for p in g4_curve]
    gs = [p[1] for p in g4_curve]
    ax.plot(ds, gs, marker=".", label=r"$g_4(d, -1/\sqrt{d})$")
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.axvline(report["d_star"], color="tab:red", linestyle="--",
               label=f"critical degree {report['d_star']:.4f}")
    ax.set_xlabel("d")
    ax.set_ylabel("cubic coefficient")
    ax.legend()
    _finish(fig, out_png)


def plot_detect(reports: list, out_png: str) -> None:
    """reports: dicts with ell, success, success_classified."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ells = [r["ell"] for r in reports]
    ax.plot(ells, [r["success"] for r in reports], marker="o", label="success")
    ax.plot(ells, [r["success_classified"] for r in reports], marker="s",
            label="success (classified only)")
    ax.set_xlabel("radius")
    ax.set_ylabel("majority-class success rate")
    ax.legend()
    _finish(fig, out_png)
