"""Line-oriented dataset files: one schema header line, then one example per line.

    schema M=<int> F=<int> d_irrelevant cards=<v1,...> lens=<n1,...> vocabs=<w1,...> tasks=<N>
    user=<id>|cat=<v1,...>|seq1=<i1,...>|...|seqF=<...>|labels=<l1,...>|mask=<m1,...>

Indices are 1-based. An empty sequence is an empty value after ``=``. ``mask``
is 1 where the label is observed.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Tuple

from .errors import DatasetParseError, SchemaViolationError, StorageError
from .types import Example, FeatureSchema

logger = logging.getLogger(__name__)

ENCODING = "utf-8"


def _ints(text: str, what: str, line_number: int) -> List[int]:
    if not text:
        return []
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise DatasetParseError(f"{what}: {text!r} is not a comma-separated integer list", line_number) from None


def format_header(schema: FeatureSchema) -> str:
    def join(xs: Iterable[int]) -> str:
        return ",".join(str(x) for x in xs)

    return (
        f"schema M={schema.num_fields} F={schema.num_behaviors} d_irrelevant "
        f"cards={join(schema.cardinalities)} lens={join(schema.max_lens)} "
        f"vocabs={join(schema.vocab_sizes)} tasks={schema.num_tasks}"
    )


def parse_header(line: str) -> FeatureSchema:
    parts = line.split()
    if not parts or parts[0] != "schema":
        raise DatasetParseError("first line must start with 'schema'", 1)
    fields: Dict[str, str] = {}
    for token in parts[1:]:
        if token == "d_irrelevant":
            continue
        if "=" not in token:
            raise DatasetParseError(f"header token {token!r} is not key=value", 1)
        k, v = token.split("=", 1)
        fields[k] = v
    missing = [k for k in ("M", "F", "cards", "lens", "vocabs", "tasks") if k not in fields]
    if missing:
        raise DatasetParseError(f"header is missing {', '.join(missing)}", 1)
    try:
        M, F, tasks = int(fields["M"]), int(fields["F"]), int(fields["tasks"])
    except ValueError:
        raise DatasetParseError("header M, F and tasks must be integers", 1) from None
    cards = _ints(fields["cards"], "cards", 1)
    lens = _ints(fields["lens"], "lens", 1)
    vocabs = _ints(fields["vocabs"], "vocabs", 1)
    if len(cards) != M:
        raise DatasetParseError(f"header declares M={M} but lists {len(cards)} cardinalities", 1)
    if len(lens) != F or len(vocabs) != F:
        raise DatasetParseError(f"header declares F={F} but lists {len(lens)} lens and {len(vocabs)} vocabs", 1)
    schema = FeatureSchema(
        cardinalities=tuple(cards), max_lens=tuple(lens), vocab_sizes=tuple(vocabs), num_tasks=tasks
    )
    try:
        schema.validate()
    except SchemaViolationError as exc:
        raise SchemaViolationError(f"line 1: {exc}") from None
    return schema


def format_example(ex: Example) -> str:
    if "|" in ex.user_id or "\n" in ex.user_id or not ex.user_id:
        raise SchemaViolationError(f"user id {ex.user_id!r} must be non-empty without '|' or newlines")

    def join(xs: Iterable) -> str:
        return ",".join(str(int(x)) for x in xs)

    parts = [f"user={ex.user_id}", f"cat={join(ex.categorical_values)}"]
    parts.extend(f"seq{a + 1}={join(items)}" for a, items in enumerate(ex.sequences))
    labels = [y if seen else 0 for y, seen in zip(ex.labels, ex.label_mask)]
    parts.append(f"labels={join(labels)}")
    parts.append(f"mask={join(ex.label_mask)}")
    return "|".join(parts)


def parse_example(line: str, schema: FeatureSchema, line_number: int) -> Example:
    parts = line.split("|")
    expected = ["user", "cat"] + [f"seq{a + 1}" for a in range(schema.num_behaviors)] + ["labels", "mask"]
    if len(parts) != len(expected):
        raise DatasetParseError(f"expected {len(expected)} '|'-separated fields, got {len(parts)}", line_number)
    values: Dict[str, str] = {}
    for part, key in zip(parts, expected):
        k, sep, v = part.partition("=")
        if not sep or k != key:
            raise DatasetParseError(f"expected field {key!r}, got {part[:20]!r}", line_number)
        values[key] = v
    mask = _ints(values["mask"], "mask", line_number)
    if any(m not in (0, 1) for m in mask):
        raise DatasetParseError(f"mask entries must be 0/1, got {values['mask']!r}", line_number)
    ex = Example(
        user_id=values["user"],
        categorical_values=_ints(values["cat"], "cat", line_number),
        sequences=[_ints(values[f"seq{a + 1}"], f"seq{a + 1}", line_number) for a in range(schema.num_behaviors)],
        labels=_ints(values["labels"], "labels", line_number),
        label_mask=[bool(m) for m in mask],
    )
    try:
        ex.validate(schema)
    except SchemaViolationError as exc:
        raise SchemaViolationError(f"line {line_number}: {exc}") from None
    return ex


def write_dataset(path: Path, schema: FeatureSchema, examples: Iterable[Example]) -> int:
    """Write header + examples with ``\\n`` line endings; returns the example count."""
    path = Path(path)
    n = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding=ENCODING, newline="\n") as f:
            f.write(format_header(schema) + "\n")
            for ex in examples:
                ex.validate(schema)
                f.write(format_example(ex) + "\n")
                n += 1
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    logger.info("wrote %d examples to %s", n, path)
    return n


def _iter_body(path: Path, schema: FeatureSchema) -> Iterator[Example]:
    try:
        with path.open("r", encoding=ENCODING) as f:
            next(f, None)
            for line_number, raw in enumerate(f, start=2):
                line = raw.rstrip("\r\n")
                if not line.strip():
                    continue
                yield parse_example(line, schema, line_number)
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DatasetParseError(f"{path} is not UTF-8 text: {exc}") from exc


def read_dataset(path: Path) -> Tuple[FeatureSchema, Iterator[Example]]:
    """The header schema (default model widths) and a stream of validated examples."""
    path = Path(path)
    try:
        with path.open("r", encoding=ENCODING) as f:
            header = f.readline().rstrip("\r\n")
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DatasetParseError(f"{path} is not UTF-8 text: {exc}") from exc
    if not header:
        raise DatasetParseError(f"{path} has no schema header", 1)
    schema = parse_header(header)
    return schema, _iter_body(path, schema)


def load_examples(path: Path) -> Tuple[FeatureSchema, List[Example]]:
    schema, stream = read_dataset(path)
    return schema, list(stream)


def check_compatible(declared: FeatureSchema, model_schema: FeatureSchema, source: str) -> None:
    """The dataset header and the model agree on every data dimension."""
    if declared.data_signature() != model_schema.data_signature():
        raise SchemaViolationError(
            f"{source} declares {declared.data_signature()}, model expects {model_schema.data_signature()}"
        )
