"""Domain types: CAN messages and message sets, task graphs, platforms.

All times are integer ticks. Priorities follow CAN identifier semantics:
the smaller number wins arbitration.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    ArithmeticOverflow,
    DuplicatePriority,
    MalformedInput,
    NonPositiveParameter,
    UnknownMessage,
)

INT64_MAX = 2**63 - 1

MESSAGE_FIELDS = ("id", "priority", "c", "t", "d", "j")


def check_int64(value: int, what: str = "value") -> int:
    if not -INT64_MAX - 1 <= value <= INT64_MAX:
        raise ArithmeticOverflow(f"{what} {value} outside signed 64-bit range")
    return value


@dataclass(frozen=True)
class Message:
    id: str
    priority: int
    c: int
    t: int
    d: int
    j: int = 0

    @property
    def utilization(self) -> float:
        return self.c / self.t

    def well_formed(self) -> bool:
        """True when the usual C <= D <= T relation holds."""
        return self.c <= self.d <= self.t


@dataclass(frozen=True)
class MessageSet:
    """Messages ordered highest priority first.

    Build these through :func:`validate_message_set`; the constructor does
    not re-check invariants.
    """

    messages: tuple[Message, ...] = ()
    flagged: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {m.id: n for n, m in enumerate(self.messages)})

    def __len__(self):
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def __getitem__(self, key):
        if isinstance(key, int):
            return self.messages[key]
        return self.messages[self.position(key)]

    def __contains__(self, msg_id) -> bool:
        return msg_id in self._index

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.messages]

    def position(self, msg_id: str) -> int:
        try:
            return self._index[msg_id]
        except KeyError:
            raise UnknownMessage(msg_id) from None

    def hp(self, msg_id: str) -> list[Message]:
        return list(self.messages[: self.position(msg_id)])

    def lp(self, msg_id: str) -> list[Message]:
        return list(self.messages[self.position(msg_id) + 1 :])

    @property
    def utilization(self) -> float:
        return sum(m.c / m.t for m in self.messages)

    def replace_messages(self, messages: Iterable[Message]) -> "MessageSet":
        return validate_message_set(messages)


def validate_message_set(raw: Iterable[Message]) -> MessageSet:
    """Check parameters, reject priority ties and sort by priority.

    Messages violating ``c <= d <= t`` are kept but their ids are listed in
    ``MessageSet.flagged``.
    """
    msgs = list(raw)
    seen_prio: dict[int, str] = {}
    seen_ids: set[str] = set()
    flagged = []
    for m in msgs:
        for name in ("c", "t", "d"):
            if getattr(m, name) < 1:
                raise NonPositiveParameter(f"message {m.id}: {name}={getattr(m, name)} must be >= 1")
        if m.j < 0:
            raise NonPositiveParameter(f"message {m.id}: j={m.j} must be >= 0")
        if m.priority < 1:
            raise NonPositiveParameter(f"message {m.id}: priority={m.priority} must be >= 1")
        for name in ("c", "t", "d", "j", "priority"):
            check_int64(getattr(m, name), f"message {m.id} {name}")
        if m.priority in seen_prio:
            raise DuplicatePriority(
                f"messages {seen_prio[m.priority]} and {m.id} share priority {m.priority}"
            )
        if m.id in seen_ids:
            raise MalformedInput(f"duplicate message id {m.id}")
        seen_prio[m.priority] = m.id
        seen_ids.add(m.id)
        if not m.well_formed():
            flagged.append(m.id)
    ordered = sorted(msgs, key=lambda m: m.priority)
    return MessageSet(tuple(ordered), tuple(flagged))


def hp_set(ms: MessageSet, msg_id: str) -> list[Message]:
    return ms.hp(msg_id)


def lp_set(ms: MessageSet, msg_id: str) -> list[Message]:
    return ms.lp(msg_id)


@dataclass(frozen=True)
class AnalysisConfig:
    tau_bit: int = 1
    iter_limit: int = 256
    cap_factor: int = 4

    def __post_init__(self):
        from .errors import InvalidConfig

        if self.tau_bit < 0 or self.iter_limit < 1 or self.cap_factor < 1:
            raise InvalidConfig(f"invalid analysis config {self}")

    def cap(self, m: Message) -> int:
        return self.cap_factor * max(m.d, m.t)


# -- task graphs -------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    id: str
    wcet: int
    t: int
    d: int
    priority: int


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    frame: Message


@dataclass(frozen=True)
class TaskGraph:
    tasks: tuple[Task, ...]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise MalformedInput("duplicate task id")
        for t in self.tasks:
            if t.wcet < 1 or t.t < 1 or t.d < 1:
                raise NonPositiveParameter(f"task {t.id}: wcet, t and d must be >= 1")
        prios = [t.priority for t in self.tasks]
        if len(set(prios)) != len(prios):
            raise DuplicatePriority("task priorities must be unique")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise MalformedInput(f"edge {e.frame.id} references unknown task")
        # frames are validated as a message set for their priority uniqueness
        validate_message_set(e.frame for e in self.edges)

    @property
    def task_ids(self) -> list[str]:
        return [t.id for t in self.tasks]


@dataclass(frozen=True)
class Platform:
    node_count: int

    def __post_init__(self):
        if self.node_count < 1:
            raise NonPositiveParameter("node_count must be >= 1")


# -- file formats -------------------------------------------------------------


def _data_lines(text: str):
    return [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def parse_message_csv(text: str) -> MessageSet:
    lines = _data_lines(text)
    if not lines:
        raise MalformedInput("message-set file has no header")
    reader = csv.DictReader(lines)
    if tuple(h.strip() for h in reader.fieldnames or ()) != MESSAGE_FIELDS:
        raise MalformedInput(f"expected header {','.join(MESSAGE_FIELDS)}, got {reader.fieldnames}")
    msgs = []
    for lineno, row in enumerate(reader, start=2):
        try:
            msgs.append(
                Message(
                    id=row["id"].strip(),
                    priority=int(row["priority"]),
                    c=int(row["c"]),
                    t=int(row["t"]),
                    d=int(row["d"]),
                    j=int(row["j"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise MalformedInput(f"data row {lineno}: {exc}") from None
    return validate_message_set(msgs)


def load_message_set(path) -> MessageSet:
    return parse_message_csv(Path(path).read_text())


def format_message_csv(ms: Iterable[Message], header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MESSAGE_FIELDS)
    for m in ms:
        w.writerow([m.id, m.priority, m.c, m.t, m.d, m.j])
    return buf.getvalue()


def _message_from_dict(d: dict) -> Message:
    return Message(
        id=str(d["id"]),
        priority=int(d["priority"]),
        c=int(d["c"]),
        t=int(d["t"]),
        d=int(d["d"]),
        j=int(d.get("j", 0)),
    )


def task_graph_from_dict(doc: dict) -> TaskGraph:
    try:
        tasks = tuple(
            Task(
                id=str(t["id"]),
                wcet=int(t["wcet"]),
                t=int(t["t"]),
                d=int(t["d"]),
                priority=int(t["priority"]),
            )
            for t in doc["tasks"]
        )
        edges = tuple(
            Edge(src=str(e["src"]), dst=str(e["dst"]), frame=_message_from_dict(e["frame"]))
            for e in doc.get("edges", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"bad task graph document: {exc!r}") from None
    return TaskGraph(tasks, edges)


def task_graph_to_dict(tg: TaskGraph) -> dict:
    return {
        "tasks": [
            {"id": t.id, "wcet": t.wcet, "t": t.t, "d": t.d, "priority": t.priority} for t in tg.tasks
        ],
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "frame": {
                    "id": e.frame.id,
                    "priority": e.frame.priority,
                    "c": e.frame.c,
                    "t": e.frame.t,
                    "d": e.frame.d,
                    "j": e.frame.j,
                },
            }
            for e in tg.edges
        ],
    }


def load_task_graph(path) -> TaskGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: {exc}") from None
    return task_graph_from_dict(doc)
