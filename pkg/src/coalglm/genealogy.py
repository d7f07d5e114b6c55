"""Dated genealogies: Newick parsing, validation, and event timelines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GenealogyError",
    "Genealogy",
    "EventTimeline",
    "SAMPLING",
    "COALESCENT",
    "parse_genealogy",
    "parse_tip_date_table",
    "emit_newick",
    "event_timeline",
]

SAMPLING = 0
COALESCENT = 1


class GenealogyError(ValueError):
    """Malformed tree, bad dates, or violated genealogy invariants."""


@dataclass(frozen=True)
class Genealogy:
    """A rooted, dated, binary tree for one locus.

    Nodes are indexed 0..2n-2 with tips first (0..n-1) and internal nodes
    after (n..2n-2, root last is not guaranteed).  Times are backward:
    larger is older.

    Attributes
    ----------
    tip_ids : tuple of str
        Tip labels in node order.
    node_times : ndarray, shape (2n-1,)
        Backward time of every node; tips carry their sampling times.
    parent : ndarray of int, shape (2n-1,)
        Parent node index, -1 for the root.
    locus : str
        Free-form locus label.
    """

    tip_ids: tuple[str, ...]
    node_times: np.ndarray
    parent: np.ndarray
    locus: str = ""

    def __post_init__(self):
        node_times = np.asarray(self.node_times, dtype=float)
        parent = np.asarray(self.parent, dtype=int)
        object.__setattr__(self, "node_times", node_times)
        object.__setattr__(self, "parent", parent)
        self._validate()
        node_times.flags.writeable = False
        parent.flags.writeable = False

    @property
    def n_tips(self) -> int:
        return len(self.tip_ids)

    @property
    def n_nodes(self) -> int:
        return len(self.node_times)

    @property
    def tip_times(self) -> np.ndarray:
        return self.node_times[: self.n_tips]

    @property
    def coalescent_times(self) -> np.ndarray:
        return np.sort(self.node_times[self.n_tips :])

    @property
    def root(self) -> int:
        return int(np.nonzero(self.parent < 0)[0][0])

    def children(self) -> list[list[int]]:
        """Child lists per node (empty for tips)."""
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for v, p in enumerate(self.parent):
            if p >= 0:
                out[p].append(v)
        return out

    def _validate(self) -> None:
        n = self.n_tips
        if n < 2:
            raise GenealogyError("a genealogy needs at least 2 tips")
        if self.n_nodes != 2 * n - 1:
            raise GenealogyError(
                f"expected {2 * n - 1} nodes for {n} tips, got {self.n_nodes}"
            )
        if self.parent.shape != (self.n_nodes,) or self.node_times.shape != (
            self.n_nodes,
        ):
            raise GenealogyError("parent/node_times shape mismatch")
        roots = np.nonzero(self.parent < 0)[0]
        if len(roots) != 1:
            raise GenealogyError(f"expected exactly one root, found {len(roots)}")
        if not np.all(np.isfinite(self.node_times)):
            raise GenealogyError("non-finite node time")
        if np.any(self.tip_times < 0):
            raise GenealogyError("negative tip sampling time")
        degree = np.zeros(self.n_nodes, dtype=int)
        for v, p in enumerate(self.parent):
            if p >= 0:
                if p < n:
                    raise GenealogyError("a tip cannot be a parent")
                degree[p] += 1
        if np.any(degree[n:] != 2):
            raise GenealogyError("non-binary internal node")
        for v, p in enumerate(self.parent):
            if p >= 0 and not self.node_times[p] > self.node_times[v]:
                raise GenealogyError(
                    "internal node not strictly older than its child "
                    f"(node {v} at {self.node_times[v]}, parent at {self.node_times[p]})"
                )
        # most recent event must be a tip; implied by the parent ordering but
        # kept as an explicit guard on the constructed arrays
        if np.min(self.node_times) < np.min(self.tip_times):
            raise GenealogyError("most recent event is not a tip")
        coal = np.sort(self.node_times[n:])
        if np.any(np.diff(coal) == 0.0):
            raise GenealogyError(
                "simultaneous coalescent times; the likelihood requires "
                "strictly separated coalescences"
            )


@dataclass(frozen=True)
class EventTimeline:
    """Merged sampling/coalescent events of one genealogy, oldest last.

    ``lineages_after[e]`` is the number of extant lineages on the segment
    from ``times[e]`` to the next event.  Sampling events at identical times
    are merged; at equal times sampling sorts before coalescence.
    """

    times: np.ndarray
    kinds: np.ndarray
    tips_added: np.ndarray
    lineages_after: np.ndarray

    def __post_init__(self):
        for name in ("times", "kinds", "tips_added", "lineages_after"):
            arr = np.asarray(getattr(self, name))
            object.__setattr__(self, name, arr)
            arr.flags.writeable = False
        self._validate()

    @property
    def n_tips(self) -> int:
        return int(self.tips_added.sum())

    @property
    def n_coalescences(self) -> int:
        return int(np.sum(self.kinds == COALESCENT))

    @property
    def t0(self) -> float:
        """Most recent sampling time of this locus."""
        return float(self.times[0])

    @property
    def t_mrca(self) -> float:
        return float(self.times[-1])

    def segments(self):
        """Yield (start, end, lineage_count) for inter-event segments."""
        for e in range(len(self.times) - 1):
            a, b = self.times[e], self.times[e + 1]
            if b > a:
                yield float(a), float(b), int(self.lineages_after[e])

    def lineages_at(self, t: float) -> int:
        """Lineages extant at time t (segments are closed on the left)."""
        e = int(np.searchsorted(self.times, t, side="right")) - 1
        if e < 0:
            return 0
        return int(self.lineages_after[e])

    def _validate(self) -> None:
        if len(self.times) < 2:
            raise GenealogyError("timeline needs at least one coalescence")
        if np.any(np.diff(self.times) < 0):
            raise GenealogyError("timeline events out of order")
        if self.kinds[0] != SAMPLING:
            raise GenealogyError("timeline must start with a sampling event")
        count = 0
        for kind, added, after in zip(self.kinds, self.tips_added, self.lineages_after):
            if kind == SAMPLING:
                count += int(added)
            else:
                if count < 2:
                    raise GenealogyError("coalescence with fewer than 2 lineages")
                count -= 1
            if count != after or count < 0:
                raise GenealogyError("inconsistent lineage counts")
        if count != 1:
            raise GenealogyError("final lineage count is not 1")


def parse_tip_date_table(text: str) -> dict[str, float]:
    """Parse a two-column tip-date table (tip_id <tab> date)."""
    dates: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise GenealogyError(f"tip-date table line {lineno}: expected 2 columns")
        tip_id, raw = parts
        if tip_id in dates:
            raise GenealogyError(f"duplicate tip id {tip_id!r} in date table")
        try:
            dates[tip_id] = float(raw)
        except ValueError as exc:
            raise GenealogyError(
                f"tip-date table line {lineno}: bad date {raw!r}"
            ) from exc
    return dates


def _resolve_backward_times(
    dates: dict[str, float], convention: str, anchor: float | None
) -> dict[str, float]:
    if convention == "backward":
        out = dict(dates)
    elif convention == "calendar":
        if anchor is None:
            anchor = max(dates.values())
        out = {k: anchor - v for k, v in dates.items()}
    else:
        raise GenealogyError(
            f"unknown date convention {convention!r}; use 'backward' or 'calendar'"
        )
    for k, t in out.items():
        if t < 0:
            raise GenealogyError(f"tip {k!r} resolves to negative backward time {t}")
    return out


class _NewickCursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        self._skip_ws()
        if self.pos >= len(self.text):
            raise GenealogyError("unexpected end of Newick string")
        return self.text[self.pos]

    def take(self) -> str:
        c = self.peek()
        self.pos += 1
        return c

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def read_label(self) -> str:
        self._skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in "(),:;":
            self.pos += 1
        return self.text[start : self.pos].strip()

    def read_number(self) -> float:
        raw = self.read_label()
        try:
            return float(raw)
        except ValueError as exc:
            raise GenealogyError(f"bad branch length {raw!r}") from exc


def _parse_newick(text: str):
    """Parse one Newick tree into (labels, children, lengths).

    Node 0 is the root; lengths[v] is the branch above v (None for root).
    """
    cur = _NewickCursor(text)
    labels: list[str] = []
    children: list[list[int]] = []
    lengths: list[float | None] = []

    def new_node() -> int:
        labels.append("")
        children.append([])
        lengths.append(None)
        return len(labels) - 1

    def subtree() -> int:
        v = new_node()
        if cur.peek() == "(":
            cur.take()
            children[v].append(subtree())
            while cur.peek() == ",":
                cur.take()
                children[v].append(subtree())
            if cur.take() != ")":
                raise GenealogyError("expected ')' in Newick string")
        labels[v] = cur.read_label()
        if cur.peek() == ":":
            cur.take()
            lengths[v] = cur.read_number()
        return v

    root = subtree()
    if cur.take() != ";":
        raise GenealogyError("Newick string must end with ';'")
    cur._skip_ws()
    if cur.pos != len(cur.text):
        raise GenealogyError("trailing content after ';'")
    return root, labels, children, lengths


def parse_genealogy(
    text: str,
    tip_dates: dict[str, float] | None = None,
    date_convention: str = "backward",
    anchor: float | None = None,
    label_date_delimiter: str | None = None,
    tolerance: float = 1e-8,
    locus: str = "",
) -> Genealogy:
    """Parse a Newick string with dated tips into a Genealogy.

    Tip dates come from ``tip_dates``, or from label suffixes split on
    ``label_date_delimiter``, or default to 0 for every tip (isochronous).
    Dates are backward-time offsets or calendar values anchored at the most
    recent date (``anchor`` overrides the default anchor).

    Internal node times are recovered from branch lengths; every tip must
    agree on the implied root time to within ``tolerance``, otherwise the
    dates are inconsistent with the branch lengths and parsing fails.
    """
    root, labels, children, lengths = _parse_newick(text)
    n_nodes = len(labels)
    is_tip = [len(children[v]) == 0 for v in range(n_nodes)]
    for v in range(n_nodes):
        if not is_tip[v] and len(children[v]) != 2:
            raise GenealogyError(
                f"non-binary node with {len(children[v])} children; polytomies "
                "are not supported"
            )
        if v != root and lengths[v] is None:
            raise GenealogyError("missing branch length")
        if lengths[v] is not None and lengths[v] < 0:
            raise GenealogyError(f"negative branch length {lengths[v]}")

    tips = [v for v in range(n_nodes) if is_tip[v]]
    if len(tips) < 2:
        raise GenealogyError("a genealogy needs at least 2 tips")
    names: dict[int, str] = {}
    declared: dict[int, float] = {}
    for v in tips:
        label = labels[v]
        if not label:
            raise GenealogyError("unlabeled tip")
        name = label
        if tip_dates is not None:
            if label not in tip_dates:
                raise GenealogyError(f"tip {label!r} missing from the date table")
            declared[v] = tip_dates[label]
        elif label_date_delimiter is not None:
            head, sep, raw = label.rpartition(label_date_delimiter)
            if not sep or not head:
                raise GenealogyError(
                    f"tip label {label!r} lacks a {label_date_delimiter!r}-delimited date"
                )
            try:
                declared[v] = float(raw)
            except ValueError as exc:
                raise GenealogyError(f"bad date suffix in tip label {label!r}") from exc
            name = head
        else:
            declared[v] = 0.0
        names[v] = name
    if len(set(names.values())) != len(tips):
        raise GenealogyError("duplicate tip labels")

    backward = _resolve_backward_times(
        {names[v]: declared[v] for v in tips}, date_convention, anchor
    )

    # depth = path length from root; every tip must imply the same root time
    depth = np.zeros(n_nodes)
    stack = [root]
    while stack:
        v = stack.pop()
        for c in children[v]:
            depth[c] = depth[v] + lengths[c]
            stack.append(c)
    candidates = np.array([backward[names[v]] + depth[v] for v in tips])
    if candidates.max() - candidates.min() > tolerance:
        raise GenealogyError(
            "tip dates inconsistent with branch lengths: implied root times "
            f"range over [{candidates.min()}, {candidates.max()}]"
        )

    # tips keep their declared dates exactly; internal times propagate up
    n = len(tips)
    order = sorted(tips, key=lambda v: names[v])
    index = {v: i for i, v in enumerate(order)}
    internals = [v for v in range(n_nodes) if not is_tip[v]]
    for v in internals:
        index[v] = n + len([u for u in internals if u < v])
    node_times = np.empty(2 * n - 1)
    parent = np.full(2 * n - 1, -1, dtype=int)
    for v in tips:
        node_times[index[v]] = backward[names[v]]
    times_raw = {v: backward[names[v]] for v in tips}
    for v in sorted(internals, key=lambda u: depth[u], reverse=True):
        times_raw[v] = max(times_raw[c] + lengths[c] for c in children[v])
        node_times[index[v]] = times_raw[v]
    for v in range(n_nodes):
        for c in children[v]:
            parent[index[c]] = index[v]
    return Genealogy(
        tip_ids=tuple(names[v] for v in order),
        node_times=node_times,
        parent=parent,
        locus=locus,
    )


def emit_newick(g: Genealogy) -> str:
    """Serialize a Genealogy back to Newick with branch lengths in time units."""
    children = g.children()

    def render(v: int) -> str:
        if v < g.n_tips:
            body = g.tip_ids[v]
        else:
            body = "(" + ",".join(render(c) for c in children[v]) + ")"
        p = g.parent[v]
        if p < 0:
            return body
        return f"{body}:{g.node_times[p] - g.node_times[v]:.17g}"

    return render(g.root) + ";"


def event_timeline(g: Genealogy) -> EventTimeline:
    """Reduce a genealogy to its merged, sorted event timeline."""
    events: list[tuple[float, int, int]] = []
    tip_times = g.tip_times
    for t in np.unique(tip_times):
        events.append((float(t), SAMPLING, int(np.sum(tip_times == t))))
    for t in g.node_times[g.n_tips :]:
        events.append((float(t), COALESCENT, 0))
    events.sort(key=lambda e: (e[0], e[1]))

    times = np.array([e[0] for e in events])
    kinds = np.array([e[1] for e in events], dtype=int)
    tips_added = np.array([e[2] for e in events], dtype=int)
    lineages_after = np.empty(len(events), dtype=int)
    count = 0
    for i, (kind, added) in enumerate(zip(kinds, tips_added)):
        count += added if kind == SAMPLING else -1
        lineages_after[i] = count
    return EventTimeline(
        times=times, kinds=kinds, tips_added=tips_added, lineages_after=lineages_after
    )
