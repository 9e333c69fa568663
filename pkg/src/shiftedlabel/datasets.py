"""JSON Lines corpus format and key=value config files.

Each corpus line is one object::

    {"id": "17", "features": ["TKN_EM1_Hussein", "EM_DISTANCE_3"], "labels": ["per:origin"]}
"""

from __future__ import annotations

import json
from pathlib import Path

from .core import Instance, LabelVocab
from .validation import DataError


def parse_instance(obj, where="") -> Instance:
    if not isinstance(obj, dict):
        raise DataError(f"{where}expected a JSON object")
    for key in ("id", "features", "labels"):
        if key not in obj:
            raise DataError(f"{where}missing field {key!r}")
    if not isinstance(obj["id"], str):
        raise DataError(f"{where}'id' must be a string")
    feats, labels = obj["features"], obj["labels"]
    if not isinstance(feats, list) or not all(isinstance(f, str) for f in feats):
        raise DataError(f"{where}'features' must be an array of strings")
    if not isinstance(labels, list) or not all(isinstance(lab, str) for lab in labels):
        raise DataError(f"{where}'labels' must be an array of strings")
    if not labels:
        raise DataError(f"{where}'labels' is empty")
    return Instance(obj["id"], feats, tuple(labels))


def read_instances(path) -> list[Instance]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}: "
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}invalid JSON ({exc.msg})") from None
        out.append(parse_instance(obj, where))
    return out


def load_dataset(path, none_label="NONE") -> tuple[list[Instance], LabelVocab]:
    """Instances of a JSONL file and the vocabulary of their labels plus NONE."""
    instances = read_instances(path)
    vocab = LabelVocab.from_labels([lab for inst in instances for lab in inst.labels], none_label)
    return instances, vocab


def save_dataset(instances, path):
    lines = [json.dumps(inst.to_dict(), ensure_ascii=False) for inst in instances]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        values[key.replace("-", "_")] = value
    return values
