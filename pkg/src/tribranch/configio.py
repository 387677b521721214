"""Reading and writing the plain ``key = value`` config files.

Both the dataset config and the run config use this format: one assignment
per line, ``#`` starts a comment, values are strings until a caller converts
them. Unknown keys are preserved so configs can be round-tripped.
"""

from __future__ import annotations

from pathlib import Path


def read_kv(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(path: str | Path, values: dict[str, object]) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_floats(value: str) -> tuple[float, ...]:
    return tuple(float(p) for p in value.replace(",", " ").split())


def parse_ints(value: str) -> tuple[int, ...]:
    return tuple(int(p) for p in value.replace(",", " ").split())
