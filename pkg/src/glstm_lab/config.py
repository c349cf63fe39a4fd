"""Experiment configuration: file grammar, schema, and sweep expansion.

Grammar (the whole format; also documented in the README):

    file    :=  line*
    line    :=  blank | comment | section | entry
    comment :=  '#' anything-to-end-of-line   (also allowed after an entry)
    section :=  '[' name ']'                  name matches [A-Za-z_][A-Za-z0-9_]*
    entry   :=  key '=' value
    key     :=  bare | quoted                 bare matches [A-Za-z_][A-Za-z0-9_.]*
    value   :=  int | float | bool | string | list
    int     :=  [+-]? digits
    float   :=  [+-]? digits with '.' or exponent
    bool    :=  true | false
    string  :=  double-quoted, JSON escapes
    list    :=  '[' value (',' value)* ']'    flat; may be empty

Every entry lives under the most recent section header; entries before any
header are rejected.  Duplicate keys and duplicate sections are errors.
Parse errors carry 1-based line and column numbers.

The schema layer (resolve_experiment) turns the parsed dict into an
ExperimentConfig: defaults filled, unknown keys rejected, sweep axes
validated against the section schemas, value ranges checked.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field, replace

from . import tasks as tk
from .models import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line is not None else ""
        super().__init__(where + message)


# -- grammar layer ----------------------------------------------------------

_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)\]$")
_BARE_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


def _strip_comment(line: str) -> str:
    """Drop a trailing comment, respecting quoted strings."""
    in_str = False
    escaped = False
    for i, ch in enumerate(line):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
    return line


def _parse_scalar(tok: str, lineno: int, col: int):
    if tok == "true":
        return True
    if tok == "false":
        return False
    if _INT_RE.match(tok):
        return int(tok)
    if _FLOAT_RE.match(tok) and any(c in tok for c in ".eE"):
        return float(tok)
    if tok.startswith('"'):
        try:
            value = json.loads(tok)
        except json.JSONDecodeError:
            raise ConfigError(f"bad string literal {tok}", lineno, col) from None
        if not isinstance(value, str):
            raise ConfigError(f"bad string literal {tok}", lineno, col)
        return value
    raise ConfigError(f"cannot parse value {tok!r}", lineno, col)


def _split_list_items(body: str, lineno: int, col0: int):
    """Comma-split at depth zero, honoring quoted strings; yields (item, col)."""
    items = []
    start = 0
    in_str = False
    escaped = False
    for i, ch in enumerate(body):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == ",":
            items.append((body[start:i], col0 + start))
            start = i + 1
    if in_str:
        raise ConfigError("unterminated string in list", lineno, col0)
    items.append((body[start:], col0 + start))
    return items


def _parse_value(raw: str, lineno: int, col: int):
    tok = raw.strip()
    col = col + (len(raw) - len(raw.lstrip()))
    if not tok:
        raise ConfigError("missing value", lineno, col)
    if tok.startswith("["):
        if not tok.endswith("]"):
            raise ConfigError("unterminated list", lineno, col)
        body = tok[1:-1]
        if not body.strip():
            return []
        out = []
        for item, icol in _split_list_items(body, lineno, col + 1):
            stripped = item.strip()
            if not stripped:
                raise ConfigError("empty list element", lineno, icol)
            out.append(_parse_scalar(stripped, lineno, icol + (len(item) - len(item.lstrip()))))
        return out
    return _parse_scalar(tok, lineno, col)


def parse_string(text: str) -> dict:
    """Parse the config grammar into {section: {key: value}}."""
    sections: dict[str, dict] = {}
    current: str | None = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line)
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip())
        m = _SECTION_RE.match(stripped)
        if m:
            name = m.group(1)
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", lineno, indent + 1)
            sections[name] = {}
            current = name
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value' or '[section]'", lineno, indent + 1)
        key_part, _, value_part = line.partition("=")
        key = key_part.strip()
        if key.startswith('"'):
            try:
                key = json.loads(key)
            except json.JSONDecodeError:
                raise ConfigError(f"bad quoted key {key}", lineno, indent + 1) from None
        elif not _BARE_KEY_RE.match(key):
            raise ConfigError(f"bad key {key!r}", lineno, indent + 1)
        if current is None:
            raise ConfigError(f"entry {key!r} outside any [section]", lineno, indent + 1)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno, indent + 1)
        sections[current][key] = _parse_value(value_part, lineno, len(key_part) + 2)
    return sections


def parse_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_string(fh.read())


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"unsupported config value {value!r}")


def _format_value(value) -> str:
    if isinstance(value, list):
        return "[" + ", ".join(_format_scalar(v) for v in value) + "]"
    return _format_scalar(value)


def _format_key(key: str) -> str:
    return key if _BARE_KEY_RE.match(key) else json.dumps(key)


def write_string(sections: dict) -> str:
    """Deterministic inverse of parse_string: sections and keys sorted."""
    chunks = []
    for name in sorted(sections):
        chunks.append(f"[{name}]")
        for key in sorted(sections[name]):
            chunks.append(f"{_format_key(key)} = {_format_value(sections[name][key])}")
        chunks.append("")
    return "\n".join(chunks)


def write_file(path, sections: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_string(sections))


# -- schema layer -----------------------------------------------------------

TASK_NAMES = ("nar", "narr", "ring_transfer", "gpp_diameter", "gpp_eccentricity", "gpp_sssp")

_COMMON_TASK_KEYS = {"name": str, "train_size": int, "val_size": int, "test_size": int, "seed": int}
_TASK_EXTRA_KEYS = {
    "nar": {"n_neighbors": int, "d_emb": int},
    "narr": {"n_neighbors": int, "value_dim": int},
    "ring_transfer": {"ring_size": int, "num_classes": int},
    "gpp_diameter": {},
    "gpp_eccentricity": {},
    "gpp_sssp": {},
}
_TASK_DEFAULTS = {
    "train_size": tk.DEFAULT_SIZES[0],
    "val_size": tk.DEFAULT_SIZES[1],
    "test_size": tk.DEFAULT_SIZES[2],
    "seed": 0,
    "n_neighbors": 8,
    "d_emb": 16,
    "value_dim": 16,
    "ring_size": 10,
    "num_classes": 5,
}

_MODEL_KEYS = {
    "architecture": str,
    "layers": int,
    "d_h": int,
    "d_k": int,
    "heads": int,
    "k_hop": bool,
    "input_norm": str,
    "hidden_norm": str,
    "activation": str,
    "dropout": float,
    "ablate_input_gate": bool,
    "ablate_forget_gate": bool,
    "ablate_output_gate": bool,
}

_TRAIN_KEYS = {
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "weight_decay": float,
    "batch_size": int,
    "epochs": int,
    "patience": int,
    "clip_norm": float,
}

_RUN_KEYS = {"seeds": list, "name": str}


@dataclass
class ExperimentConfig:
    name: str
    task: dict  # resolved task params, includes name/sizes/seed
    model: ModelConfig  # task-independent fields only; resolved per split later
    train: TrainConfig
    seeds: list
    sweep: dict = field(default_factory=dict)  # "section.key" -> values


@dataclass
class RunSpec:
    task: dict
    model: ModelConfig
    train: TrainConfig
    seed: int
    point: dict  # axis -> value for labeling


def _coerce(section: str, key: str, value, want):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is not list and (isinstance(value, bool) is not (want is bool)):
        # bool is an int subclass; keep the two strictly apart
        raise ConfigError(f"[{section}] {key}: expected {want.__name__}, got {value!r}")
    if not isinstance(value, want):
        raise ConfigError(f"[{section}] {key}: expected {want.__name__}, got {value!r}")
    return value


def _check_keys(section: str, entries: dict, allowed: dict) -> dict:
    out = {}
    for key, value in entries.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        out[key] = _coerce(section, key, value, allowed[key])
    return out


def _task_schema(name: str) -> dict:
    return {**_COMMON_TASK_KEYS, **_TASK_EXTRA_KEYS[name]}


def resolve_experiment(sections: dict) -> ExperimentConfig:
    """Validate a parsed config and fill every default."""
    known_sections = {"task", "model", "train", "run", "sweep"}
    for name in sections:
        if name not in known_sections:
            raise ConfigError(f"unknown section [{name}]")
    task_raw = sections.get("task", {})
    if "name" not in task_raw:
        raise ConfigError("[task] needs a name")
    task_name = task_raw["name"]
    if task_name not in TASK_NAMES:
        raise ConfigError(f"unknown task {task_name!r}, expected one of {TASK_NAMES}")
    schema = _task_schema(task_name)
    task = _check_keys("task", task_raw, schema)
    for key in schema:
        if key not in task:
            task[key] = _TASK_DEFAULTS[key]

    model_raw = _check_keys("model", sections.get("model", {}), _MODEL_KEYS)
    model = ModelConfig(**model_raw)
    train_raw = _check_keys("train", sections.get("train", {}), _TRAIN_KEYS)
    train = TrainConfig(**train_raw)
    try:
        model.validate()
        train.validate()
    except ValueError as exc:  # surface range checks as config errors too
        raise ConfigError(str(exc)) from None

    run_raw = _check_keys("run", sections.get("run", {}), _RUN_KEYS)
    seeds = run_raw.get("seeds", [0])
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("[run] seeds must be a nonempty list of ints")
    exp_name = run_raw.get("name", task_name)

    sweep = {}
    section_schemas = {"task": schema, "model": _MODEL_KEYS, "train": _TRAIN_KEYS}
    for axis, values in sections.get("sweep", {}).items():
        part = axis.split(".")
        if len(part) != 2 or part[0] not in section_schemas:
            raise ConfigError(f"sweep axis {axis!r} must look like task.X, model.X or train.X")
        sect, key = part
        if key not in section_schemas[sect]:
            raise ConfigError(f"sweep axis {axis!r}: no such key in [{sect}]")
        if sect == "task" and key == "name":
            raise ConfigError("cannot sweep task.name")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {axis!r} needs a nonempty list")
        want = section_schemas[sect][key]
        sweep[axis] = [_coerce("sweep", axis, v, want) for v in values]

    return ExperimentConfig(
        name=exp_name, task=task, model=model, train=train, seeds=list(seeds), sweep=sweep
    )


def emit_resolved(exp: ExperimentConfig) -> dict:
    """ExperimentConfig back to sections; resolve(parse(write(emit(x)))) == x."""
    from dataclasses import asdict

    model = {k: v for k, v in asdict(exp.model).items() if k in _MODEL_KEYS}
    train = asdict(exp.train)
    train.pop("seed")  # run seeds live in [run]
    return {
        "task": dict(exp.task),
        "model": model,
        "train": train,
        "run": {"seeds": list(exp.seeds), "name": exp.name},
        "sweep": {k: list(v) for k, v in exp.sweep.items()},
    }


def expand_runs(exp: ExperimentConfig) -> list[RunSpec]:
    """Cartesian product of sweep axes (sorted by name) times run seeds."""
    axes = sorted(exp.sweep)
    value_lists = [exp.sweep[a] for a in axes]
    runs = []
    for combo in itertools.product(*value_lists) if axes else [()]:
        task = dict(exp.task)
        model = exp.model
        train = exp.train
        point = {}
        for axis, value in zip(axes, combo):
            sect, key = axis.split(".")
            point[axis] = value
            if sect == "task":
                task[key] = value
            elif sect == "model":
                model = replace(model, **{key: value})
            else:
                train = replace(train, **{key: value})
        for seed in exp.seeds:
            runs.append(
                RunSpec(
                    task=task,
                    model=model,
                    train=replace(train, seed=seed),
                    seed=seed,
                    point={**point, "seed": seed},
                )
            )
    return runs


def generate_split(task: dict):
    """Build the TaskSplit a resolved task dict describes."""
    sizes = (task["train_size"], task["val_size"], task["test_size"])
    name = task["name"]
    seed = task["seed"]
    if name == "nar":
        return tk.generate_nar(task["n_neighbors"], task["d_emb"], sizes, seed)
    if name == "narr":
        return tk.generate_narr(task["n_neighbors"], task["value_dim"], sizes, seed)
    if name == "ring_transfer":
        return tk.generate_ring_transfer(task["ring_size"], task["num_classes"], sizes, seed)
    return tk.generate_gpp(name.removeprefix("gpp_"), sizes, seed)
