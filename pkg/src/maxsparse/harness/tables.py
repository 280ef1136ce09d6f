"""Tab-delimited tables with ``#`` metadata headers."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Table", "write_table", "read_table", "git_blob_hash", "format_value"]


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.17g}"
    if hasattr(v, "item"):  # numpy scalars
        return format_value(v.item())
    return str(v)


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    description: str = ""

    def column(self, name):
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def to_text(self) -> str:
        lines = []
        if self.description:
            lines += [f"# {line}" for line in self.description.splitlines()]
        lines += [f"# {k}={format_value(v)}" for k, v in self.meta.items()]
        lines.append("# columns: " + "\t".join(self.columns))
        lines += ["\t".join(format_value(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"


def write_table(path, table: Table) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table.to_text(), encoding="utf-8")
    return path


def read_table(path) -> Table:
    meta, columns, rows, notes = {}, None, [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# columns: "):
            columns = tuple(line[len("# columns: "):].split("\t"))
        elif line.startswith("#"):
            body = line[1:].strip()
            key, eq, val = body.partition("=")
            if eq and " " not in key:
                meta[key] = _parse_value(val)
            else:
                notes.append(body)
        elif line:
            rows.append(tuple(_parse_value(v) for v in line.split("\t")))
    if columns is None:
        raise ValueError(f"{path}: no '# columns:' header")
    return Table(columns, rows, meta, "\n".join(notes))


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``blob <len>\\0<data>``, the id git gives the same file."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
