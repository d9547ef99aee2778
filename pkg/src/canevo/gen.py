"""Seeded generation of message-set corpora."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasibleParams, InvalidConfig, MalformedInput
from .model import Message, MessageSet, format_message_csv, load_message_set, validate_message_set

MAX_ATTEMPTS = 100
UTIL_SLACK = 0.05


@dataclass(frozen=True)
class GenParams:
    n_sets: int = 135
    msgs_per_set: int | None = None  # None: spread total_msgs over the sets
    total_msgs: int = 2600
    target_util: float = 0.55
    t_min: int = 1000
    t_max: int = 5000
    deadline_factor: float = 0.5
    jitter_factor: float = 0.1
    seed: int = 1

    def __post_init__(self):
        if self.n_sets < 0:
            raise InvalidConfig("n_sets must be >= 0")
        if not 0 < self.target_util < 1:
            raise InvalidConfig("target_util must lie in (0, 1)")
        if self.t_min < 10 or self.t_max < self.t_min:
            raise InvalidConfig("need 10 <= t_min <= t_max")
        if not 0 < self.deadline_factor <= 1:
            raise InvalidConfig("deadline_factor must lie in (0, 1]")
        if not 0 <= self.jitter_factor < 1:
            raise InvalidConfig("jitter_factor must lie in [0, 1)")
        if self.msgs_per_set is not None and self.msgs_per_set < 1:
            raise InvalidConfig("msgs_per_set must be >= 1")

    def set_size(self, set_index: int) -> int:
        if self.msgs_per_set is not None:
            return self.msgs_per_set
        base, extra = divmod(self.total_msgs, self.n_sets)
        return base + (1 if set_index < extra else 0)


def uunifast(rng: np.random.Generator, n: int, total: float) -> list[float]:
    """Unbiased split of ``total`` into ``n`` non-negative shares."""
    shares = []
    remaining = total
    for i in range(1, n):
        nxt = remaining * rng.random() ** (1.0 / (n - i))
        shares.append(remaining - nxt)
        remaining = nxt
    shares.append(remaining)
    return shares


def _stream(seed: int, set_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), set_index]))


def generate_message_set(params: GenParams, set_index: int = 0) -> MessageSet:
    """Draw one message set; deterministic in ``(params, set_index)``.

    Periods are log-uniform, deadlines uniform in ``[alpha*T, T]``, jitter
    uniform in ``[0, beta*T]``; priorities are deadline-monotonic. Draws that
    violate C <= D or overshoot the utilisation after rounding are discarded
    and redrawn from the same stream.
    """
    n = params.set_size(set_index)
    rng = _stream(params.seed, set_index)
    width = max(2, len(str(n - 1)))
    for _ in range(MAX_ATTEMPTS):
        utils = uunifast(rng, n, params.target_util)
        periods = np.exp(rng.uniform(math.log(params.t_min), math.log(params.t_max), n))
        drawn = []
        ok = True
        for idx, (u, tf) in enumerate(zip(utils, periods)):
            t = int(round(tf))
            c = max(1, int(math.floor(u * t + 0.5)))
            d = int(rng.integers(math.ceil(params.deadline_factor * t), t + 1))
            j = int(rng.integers(0, math.floor(params.jitter_factor * t) + 1))
            if c > d:
                ok = False
            drawn.append((f"m{idx:0{width}d}", c, t, d, j))
        if not ok or sum(c / t for _, c, t, _, _ in drawn) > params.target_util + UTIL_SLACK:
            continue
        ordered = sorted(drawn, key=lambda rec: (rec[3], rec[0]))
        return validate_message_set(
            Message(id=mid, priority=p, c=c, t=t, d=d, j=j)
            for p, (mid, c, t, d, j) in enumerate(ordered, start=1)
        )
    raise InfeasibleParams(
        f"set {set_index}: no feasible draw in {MAX_ATTEMPTS} attempts for {params}"
    )


def generate_sets(params: GenParams) -> list[MessageSet]:
    return [generate_message_set(params, s) for s in range(params.n_sets)]


def set_filename(set_index: int) -> str:
    return f"set_{set_index:03d}.csv"


def generate_corpus(params: GenParams, out_dir, header=()) -> dict:
    """Write one CSV per set plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for s in range(params.n_sets):
        ms = generate_message_set(params, s)
        name = set_filename(s)
        (out / name).write_text(format_message_csv(ms, header))
        files.append({"file": name, "messages": len(ms), "utilization": round(ms.utilization, 6)})
    manifest = {
        "header": list(header),
        "params": asdict(params),
        "seed": params.seed,
        "files": files,
        "total_messages": sum(f["messages"] for f in files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_corpus(corpus_dir) -> list[MessageSet]:
    """Load the sets listed in the manifest, or every ``*.csv`` when there is none."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise MalformedInput(f"corpus directory {root} does not exist")
    manifest = root / "manifest.json"
    if manifest.exists():
        try:
            names = [f["file"] for f in json.loads(manifest.read_text())["files"]]
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedInput(f"{manifest}: {exc!r}") from None
    else:
        names = sorted(p.name for p in root.glob("*.csv"))
    return [load_message_set(root / name) for name in names]
