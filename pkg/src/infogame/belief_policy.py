"""Piecewise-constant belief martingales described by finite split trees.

The uninformed player's posterior over scenarios is a martingale on the
probability simplex.  The policies here restrict it to finitely many values:
a tree whose root carries the prior and whose events split the current
belief into finitely many atoms whose weighted average reproduces it.  An
event can be gated on a rectangular state cell, evaluated at the split time
only.  At the terminal time every path jumps to a vertex of the simplex,
with probabilities given by its current belief — that draw is appended
automatically and uses randomness independent of the driving noise.

Weights and belief coordinates may be ``fractions.Fraction``; exact inputs
validate exactly and survive JSON round-trips losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .game_model import SIMPLEX_TOL, as_belief
from .sde_engine import SALT_SPLIT, PathBundle, TimeGrid, uniform_draws

Array = np.ndarray

#: tolerance for float branch weights summing to one
WEIGHT_SUM_TOL = 1e-12
#: tolerance for the float martingale (weighted children = parent) check
MARTINGALE_TOL = 1e-10
#: maximum number of same-time chained events a path may traverse
MAX_EVENT_CHAIN = 4


def _coerce_entry(w):
    """Normalize a weight/coordinate to Fraction (exact) or float."""
    if isinstance(w, Fraction):
        return w
    if isinstance(w, (int, np.integer)):
        return Fraction(int(w))
    if isinstance(w, str):
        return Fraction(w)
    if isinstance(w, (float, np.floating)):
        return float(w)
    raise ValidationError(f"cannot interpret weight {w!r}")


def _entry_float(w) -> float:
    return float(w)


def _coerce_belief(p) -> tuple:
    if isinstance(p, (tuple, list)):
        return tuple(_coerce_entry(w) for w in p)
    arr = np.asarray(p, dtype=float).reshape(-1)
    return tuple(float(v) for v in arr)


def _belief_floats(p: tuple) -> Array:
    return np.array([float(v) for v in p])


def _is_exact(entries: Iterable) -> bool:
    return all(isinstance(e, Fraction) for e in entries)


# ---------------------------------------------------------------------------
# State partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatePartition:
    """Product of per-dimension intervals from sorted breakpoints.

    Dimension j with breakpoints (b_1 < ... < b_k) is cut into k+1 intervals
    (-inf, b_1), [b_1, b_2), ..., [b_k, inf); the cell id is the row-major
    raveling of the per-dimension interval indices.  Covers the state space
    exactly once by construction.
    """

    breaks: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        for bs in self.breaks:
            if list(bs) != sorted(bs) or len(set(bs)) != len(bs):
                raise ValidationError("breakpoints must be strictly increasing")

    @property
    def d(self) -> int:
        return len(self.breaks)

    @property
    def n_cells(self) -> int:
        out = 1
        for bs in self.breaks:
            out *= len(bs) + 1
        return out

    def cell_of(self, x: Array) -> Array:
        """Cell ids for a batch of states of shape (M, d)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.d:
            raise ValidationError(
                f"partition is {self.d}-dimensional, states have {x.shape[1]}"
            )
        idx = np.zeros(x.shape[0], dtype=np.int64)
        for j, bs in enumerate(self.breaks):
            idx = idx * (len(bs) + 1) + np.searchsorted(np.asarray(bs), x[:, j],
                                                        side="right")
        return idx


# ---------------------------------------------------------------------------
# Tree nodes
# ---------------------------------------------------------------------------


@dataclass
class SplitEvent:
    """One belief jump: at ``time_index`` (grid node), paths at the parent
    node — restricted to state cell ``cell`` if given — move to branch j
    with probability weight_j."""

    time_index: int
    branches: tuple          # tuple of (weight, PolicyNode)
    cell: int | None = None

    def weights_float(self) -> Array:
        return np.array([_entry_float(w) for w, _ in self.branches])


@dataclass
class PolicyNode:
    belief: tuple            # entries are Fraction or float
    events: tuple = ()       # tuple of SplitEvent, ordered by time

    def belief_floats(self) -> Array:
        return _belief_floats(self.belief)


def make_node(belief, events: Sequence[SplitEvent] = ()) -> PolicyNode:
    return PolicyNode(belief=_coerce_belief(belief), events=tuple(events))


@dataclass
class Violation:
    node_id: int
    kind: str
    residual: float
    message: str

    def __str__(self):
        return f"[node {self.node_id}] {self.kind}: {self.message}"


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class BeliefPolicy:
    """A rooted split tree over a time grid, plus an optional state partition.

    Node ids are assigned in preorder and are stable across serialization;
    terminal vertices drawn by the automatic last jump get the synthetic ids
    ``n_nodes + scenario``.
    """

    def __init__(self, root: PolicyNode, grid: TimeGrid,
                 partition: StatePartition | None = None,
                 apply_terminal_rule: bool = True):
        self.root = root
        self.grid = grid
        self.partition = partition
        self.apply_terminal_rule = apply_terminal_rule
        self.n_scenarios = len(root.belief)
        self._freeze()

    # -- structure ---------------------------------------------------------

    def _freeze(self) -> None:
        self.nodes: list[PolicyNode] = []
        self.node_id: dict[int, int] = {}      # id(obj) -> preorder index
        self.parent_event: dict[int, tuple] = {}

        def visit(node: PolicyNode):
            if id(node) in self.node_id:
                raise ValidationError("policy tree must not share node objects")
            self.node_id[id(node)] = len(self.nodes)
            self.nodes.append(node)
            for ev in node.events:
                for _, child in ev.branches:
                    visit(child)

        visit(self.root)
        self.n_nodes = len(self.nodes)
        # events indexed by time for the sampler
        self.events_at: dict[int, list[tuple[int, SplitEvent]]] = {}
        for node in self.nodes:
            h = self.node_id[id(node)]
            for ev in node.events:
                self.events_at.setdefault(ev.time_index, []).append((h, ev))
        self.belief_table = np.zeros((self.n_nodes + self.n_scenarios,
                                      self.n_scenarios))
        for node in self.nodes:
            self.belief_table[self.node_id[id(node)]] = node.belief_floats()
        for i in range(self.n_scenarios):
            self.belief_table[self.n_nodes + i, i] = 1.0

    def vertex_node_id(self, scenario: int) -> int:
        return self.n_nodes + scenario

    # -- validation ----------------------------------------------------------

    def validate(self) -> list[Violation]:
        """All structural violations: weight sums, martingale residuals,
        simplex membership, time ordering, cell sanity, terminal coverage."""
        out: list[Violation] = []
        n = self.grid.n_steps

        def check_node(node: PolicyNode, min_time: int, chain: int):
            h = self.node_id[id(node)]
            bel = node.belief
            if len(bel) != self.n_scenarios:
                out.append(Violation(h, "simplex", float("nan"),
                                     "belief dimension mismatch"))
                return
            bf = _belief_floats(bel)
            ssum = sum(bel) if _is_exact(bel) else float(bf.sum())
            resid = abs(float(ssum) - 1.0)
            if resid > SIMPLEX_TOL * max(1, len(bel)) or bf.min() < -SIMPLEX_TOL:
                out.append(Violation(h, "simplex", resid,
                                     f"belief {bf} off the simplex"))
            seen: set[tuple] = set()
            for ev in node.events:
                if not 0 <= ev.time_index <= n - 1:
                    out.append(Violation(h, "time-order", 0.0,
                                         f"event time {ev.time_index} outside 0..{n-1}"))
                if ev.time_index < min_time:
                    out.append(Violation(h, "time-order", 0.0,
                                         f"event time {ev.time_index} precedes parent event"))
                key = (ev.time_index, ev.cell)
                if key in seen or (ev.cell is None and
                                   any(k[0] == ev.time_index for k in seen)):
                    out.append(Violation(h, "cell", 0.0,
                                         f"overlapping events at time {ev.time_index}"))
                seen.add(key)
                if ev.cell is not None:
                    if self.partition is None:
                        out.append(Violation(h, "cell", 0.0,
                                             "cell-gated event without a partition"))
                    elif not 0 <= ev.cell < self.partition.n_cells:
                        out.append(Violation(h, "cell", 0.0,
                                             f"cell id {ev.cell} out of range"))
                ws = [w for w, _ in ev.branches]
                if len(ws) == 0:
                    out.append(Violation(h, "weight-sum", 1.0, "event has no branches"))
                    continue
                if any(_entry_float(w) <= 0 for w in ws):
                    out.append(Violation(h, "negative-weight", 0.0,
                                         "branch weights must be positive"))
                exact = _is_exact(ws)
                wsum = sum(ws) if exact else float(np.sum([float(w) for w in ws]))
                resid = abs(float(wsum) - 1.0)
                if (exact and wsum != 1) or (not exact and resid > WEIGHT_SUM_TOL):
                    out.append(Violation(h, "weight-sum", resid,
                                         f"branch weights sum to {wsum}"))
                # martingale: weighted child beliefs reproduce the parent
                kids = [child.belief for _, child in ev.branches]
                if exact and all(_is_exact(kb) for kb in kids) and _is_exact(bel):
                    mix = [sum(w * kb[i] for w, kb in zip(ws, kids))
                           for i in range(self.n_scenarios)]
                    if any(mix[i] != bel[i] for i in range(self.n_scenarios)):
                        dev = max(abs(float(mix[i] - bel[i]))
                                  for i in range(self.n_scenarios))
                        out.append(Violation(h, "martingale", dev,
                                             "children do not average to parent"))
                else:
                    mix = np.zeros(self.n_scenarios)
                    for w, child in ev.branches:
                        mix += _entry_float(w) * child.belief_floats()
                    dev = float(np.abs(mix - bf).max())
                    if dev > MARTINGALE_TOL:
                        out.append(Violation(h, "martingale", dev,
                                             f"children average off by {dev:.2e}"))
                nxt_chain = chain + 1 if ev.time_index == min_time else 1
                if nxt_chain > MAX_EVENT_CHAIN:
                    out.append(Violation(h, "event-depth", 0.0,
                                         f"more than {MAX_EVENT_CHAIN} chained events "
                                         f"at time {ev.time_index}"))
                for _, child in ev.branches:
                    check_node(child, ev.time_index, nxt_chain)

        check_node(self.root, 0, 0)

        if not self.apply_terminal_rule:
            for node, bf in self._reachable_leaves():
                if not np.any(np.abs(bf - 1.0) < SIMPLEX_TOL):
                    out.append(Violation(self.node_id[id(node)], "terminal-vertex",
                                         float(1.0 - bf.max()),
                                         "terminal rule disabled but leaf belief "
                                         f"{bf} is not a vertex"))
        return out

    def _reachable_leaves(self):
        """Nodes a path can still occupy at the terminal time."""
        out = []

        def walk(node: PolicyNode):
            # an ungated event vacates the node at its time; without one,
            # some path can still sit here when the horizon is reached
            if not any(ev.cell is None for ev in node.events):
                out.append((node, node.belief_floats()))
            for ev in node.events:
                for _, child in ev.branches:
                    walk(child)

        walk(self.root)
        return out

    def require_valid(self) -> "BeliefPolicy":
        bad = self.validate()
        if bad:
            raise ValidationError("invalid belief policy: "
                                  + "; ".join(str(v) for v in bad[:5]))
        return self

    # -- support -------------------------------------------------------------

    def support(self) -> Array:
        """All belief values the policy can visit (tree nodes plus vertices)."""
        return self.belief_table.copy()

    def __eq__(self, other):
        return (isinstance(other, BeliefPolicy)
                and policy_to_dict(self) == policy_to_dict(other))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def constant_policy(p, grid: TimeGrid) -> BeliefPolicy:
    """No information release before the forced terminal jump."""
    return BeliefPolicy(make_node(p), grid).require_valid()


def one_shot_split(p, atoms: Sequence, weights: Sequence, grid: TimeGrid,
                   time_index: int = 0) -> BeliefPolicy:
    """Split the prior once, at ``time_index``, into the given atoms.

    Raises if the weights are not a probability vector or the weighted atoms
    do not average back to the prior.
    """
    root = make_node(p, events=[SplitEvent(
        time_index=time_index,
        branches=tuple((_coerce_entry(w), make_node(q))
                       for w, q in zip(weights, atoms)),
    )])
    if len(atoms) != len(weights):
        raise ValidationError("need one weight per atom")
    return BeliefPolicy(root, grid).require_valid()


def _tree_equal(a: PolicyNode, b: PolicyNode, before: int) -> bool:
    """Structural equality of trees restricted to events before ``before``."""
    if np.max(np.abs(a.belief_floats() - b.belief_floats())) > 1e-15:
        return False
    ea = [ev for ev in a.events if ev.time_index < before]
    eb = [ev for ev in b.events if ev.time_index < before]
    if len(ea) != len(eb):
        return False
    for x, y in zip(ea, eb):
        if x.time_index != y.time_index or x.cell != y.cell:
            return False
        if len(x.branches) != len(y.branches):
            return False
        for (wx, cx), (wy, cy) in zip(x.branches, y.branches):
            if abs(_entry_float(wx) - _entry_float(wy)) > 1e-15:
                return False
            if not _tree_equal(cx, cy, before):
                return False
    return True


def _prefix_leaves(node: PolicyNode, before: int) -> list[list[int]]:
    """Paths (as branch-index sequences) to the nodes alive just before
    ``before``, assuming no cell-gated events occur earlier."""
    early = [ev for ev in node.events if ev.time_index < before]
    if any(ev.cell is not None for ev in early):
        raise ValidationError("glue requires no cell-gated events before the "
                              "gluing time")
    if not early:
        return [[]]
    first = min(early, key=lambda ev: ev.time_index)
    out = []
    ei = node.events.index(first)
    for j, (_, child) in enumerate(first.branches):
        for tail in _prefix_leaves(child, before):
            out.append([ei, j] + tail)
    return out


def _node_at(node: PolicyNode, path: list[int]) -> PolicyNode:
    for ei, j in zip(path[0::2], path[1::2]):
        node = node.events[ei].branches[j][1]
    return node


def _copy_subtree(node: PolicyNode, from_time: int) -> PolicyNode:
    keep = []
    for ev in node.events:
        if ev.time_index >= from_time:
            keep.append(SplitEvent(
                time_index=ev.time_index, cell=ev.cell,
                branches=tuple((w, _copy_subtree(c, 0)) for w, c in ev.branches),
            ))
    return PolicyNode(belief=node.belief, events=tuple(keep))


@dataclass(frozen=True)
class GlueCase:
    """Route paths in the given state cells and alive tree nodes to one of
    the component policies.  ``None`` means "all"."""

    policy: int
    cells: tuple[int, ...] | None = None
    nodes: tuple[int, ...] | None = None


def glue(policies: Sequence[BeliefPolicy], time_index: int,
         cases: Sequence[GlueCase]) -> BeliefPolicy:
    """Paste continuation policies at a fixed time over a partition of
    (state cell) x (alive belief node).

    All policies must share the root belief, the grid, the partition and the
    entire tree before ``time_index``; the cases must cover each
    (cell, node) pair exactly once.  The composite follows the common prefix
    and then, at the gluing time, continues as the selected policy — routing
    is by single-branch events, so no extra randomness is consumed.
    """
    if not policies:
        raise ValidationError("need at least one policy to glue")
    base = policies[0]
    for pol in policies[1:]:
        if pol.grid != base.grid or pol.partition != base.partition:
            raise ValidationError("glued policies must share grid and partition")
        if not _tree_equal(pol.root, base.root, time_index):
            raise ValidationError("glued policies must agree before the gluing time")
    if not 0 < time_index <= base.grid.n_steps - 1:
        raise ValidationError("gluing time must be an interior grid index")

    leaf_paths = _prefix_leaves(base.root, time_index)
    n_leaves = len(leaf_paths)
    cell_domain: list = (list(range(base.partition.n_cells))
                         if base.partition is not None else [None])

    cover: dict[tuple, int] = {}
    for ci, case in enumerate(cases):
        if not 0 <= case.policy < len(policies):
            raise ValidationError(f"case {ci} selects unknown policy {case.policy}")
        cs = cell_domain if case.cells is None else list(case.cells)
        ns = list(range(n_leaves)) if case.nodes is None else list(case.nodes)
        for c in cs:
            if c is not None and c not in cell_domain:
                raise ValidationError(f"case {ci} references unknown cell {c}")
            for nd in ns:
                if not 0 <= nd < n_leaves:
                    raise ValidationError(f"case {ci} references unknown node {nd}")
                if (c, nd) in cover:
                    raise ValidationError(f"cases overlap on cell {c}, node {nd}")
                cover[(c, nd)] = case.policy
    missing = [(c, nd) for c in cell_domain for nd in range(n_leaves)
               if (c, nd) not in cover]
    if missing:
        raise ValidationError(f"cases do not cover {missing[:4]} ...")

    # rebuild the common prefix, grafting per-leaf routers
    def rebuild(node: PolicyNode, path_prefix: list[int]) -> PolicyNode:
        early = [ev for ev in node.events if ev.time_index < time_index]
        if not early:
            leaf_key = leaf_paths.index(path_prefix)
            routers = []
            by_policy: dict[tuple, list] = {}
            for c in cell_domain:
                by_policy.setdefault((cover[(c, leaf_key)],), []).append(c)
            for (pol_idx,), cs in sorted(by_policy.items()):
                source = _node_at(policies[pol_idx].root, path_prefix)
                cont = _copy_subtree(source, time_index)
                if cs == cell_domain:
                    routers.append(SplitEvent(time_index=time_index, cell=None,
                                              branches=((Fraction(1), cont),)))
                else:
                    for c in cs:
                        cont_c = _copy_subtree(source, time_index)
                        routers.append(SplitEvent(time_index=time_index, cell=c,
                                                  branches=((Fraction(1), cont_c),)))
            return PolicyNode(belief=node.belief, events=tuple(routers))
        first = min(early, key=lambda ev: ev.time_index)
        ei = node.events.index(first)
        branches = []
        for j, (w, child) in enumerate(first.branches):
            branches.append((w, rebuild(child, path_prefix + [ei, j])))
        return PolicyNode(belief=node.belief,
                          events=(SplitEvent(time_index=first.time_index,
                                             cell=None, branches=tuple(branches)),))

    root = rebuild(base.root, [])
    return BeliefPolicy(root, base.grid, base.partition).require_valid()


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


class BeliefSampler:
    """Stepwise sampler usable both for whole bundles and for closed-loop
    play where the state is only known one step at a time.

    Split randomness comes from its own salted Philox stream, keyed by
    (seed, path, time slot) — independent of the Brownian increments and
    stable when the path count grows.
    """

    def __init__(self, policy: BeliefPolicy, m: int, seed: int,
                 n_threads: int | None = None):
        self.policy = policy
        self.m = m
        self.seed = seed
        self.uniforms = uniform_draws(policy.grid, m, seed, slots=MAX_EVENT_CHAIN,
                                      salt=SALT_SPLIT, n_threads=n_threads)
        self.cur = np.zeros(m, dtype=np.int64)   # node id 0 is the root
        self._done_k = -1

    def step(self, k: int, x_k: Array | None) -> tuple[Array, Array]:
        """Advance to grid node k (must be called in order); returns the
        post-jump beliefs (M, I) and node ids (M,)."""
        pol = self.policy
        if k != self._done_k + 1:
            raise ValidationError("BeliefSampler.step must be called in order")
        self._done_k = k
        slot = np.zeros(self.m, dtype=np.int64)
        for _ in range(MAX_EVENT_CHAIN):
            fired_any = False
            for h, ev in pol.events_at.get(k, ()):
                mask = self.cur == h
                if not mask.any():
                    continue
                if ev.cell is not None:
                    if x_k is None:
                        raise ValidationError("state-gated event needs x_k")
                    mask &= pol.partition.cell_of(x_k) == ev.cell
                    if not mask.any():
                        continue
                fired_any = True
                idx = np.nonzero(mask)[0]
                if len(ev.branches) == 1:
                    child_ids = np.full(idx.size,
                                        pol.node_id[id(ev.branches[0][1])])
                else:
                    u = self.uniforms[idx, k, slot[idx]]
                    slot[idx] += 1
                    cum = np.cumsum(ev.weights_float())
                    j = np.minimum(np.searchsorted(cum, u, side="right"),
                                   len(ev.branches) - 1)
                    ids = np.array([pol.node_id[id(c)] for _, c in ev.branches])
                    child_ids = ids[j]
                self.cur[idx] = child_ids
            if not fired_any:
                break
        if k == pol.grid.n_steps and pol.apply_terminal_rule:
            self._terminal_jump(slot)
        return pol.belief_table[self.cur], self.cur.copy()

    def _terminal_jump(self, slot: Array) -> None:
        pol = self.policy
        bel = pol.belief_table[self.cur]
        at_vertex = np.max(bel, axis=1) >= 1.0 - SIMPLEX_TOL
        idx = np.nonzero(~at_vertex)[0]
        if idx.size:
            u = self.uniforms[idx, pol.grid.n_steps, slot[idx]]
            cum = np.cumsum(bel[idx], axis=1)
            j = (u[:, None] >= cum).sum(axis=1)
            j = np.minimum(j, pol.n_scenarios - 1)
            self.cur[idx] = pol.n_nodes + j
        # paths already at a vertex jump deterministically: remap their node
        # ids to the synthetic vertex ids so the terminal labeling is uniform
        vert = np.nonzero(at_vertex)[0]
        if vert.size:
            j = np.argmax(bel[vert], axis=1)
            self.cur[vert] = pol.n_nodes + j


def sample_belief_paths(policy: BeliefPolicy, bundle: PathBundle, seed: int,
                        n_threads: int | None = None) -> PathBundle:
    """Attach a sampled belief path and node-id path to every path of the
    bundle.  Gated events read the bundle's states at their own time only."""
    if bundle.grid.n_steps != policy.grid.n_steps or \
            abs(bundle.grid.t0 - policy.grid.t0) > 1e-12 or \
            abs(bundle.grid.t_end - policy.grid.t_end) > 1e-12:
        raise ValidationError("policy and bundle time grids differ")
    m, n1 = bundle.m, bundle.grid.n_steps + 1
    beliefs = np.empty((m, n1, policy.n_scenarios))
    nodes = np.empty((m, n1), dtype=np.int64)
    sampler = BeliefSampler(policy, m, seed, n_threads=n_threads)
    for k in range(n1):
        beliefs[:, k], nodes[:, k] = sampler.step(k, bundle.X[:, k])
    return bundle.with_beliefs(beliefs, nodes, seed)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _entry_to_json(w):
    if isinstance(w, Fraction):
        return {"n": w.numerator, "d": w.denominator}
    return float(w)


def _entry_from_json(obj):
    if isinstance(obj, dict):
        return Fraction(int(obj["n"]), int(obj["d"]))
    if isinstance(obj, int):
        return Fraction(obj)
    return float(obj)


def _node_to_json(node: PolicyNode) -> dict:
    return {
        "belief": [_entry_to_json(w) for w in node.belief],
        "events": [
            {
                "time_index": ev.time_index,
                "cell": ev.cell,
                "branches": [
                    {"weight": _entry_to_json(w), "child": _node_to_json(c)}
                    for w, c in ev.branches
                ],
            }
            for ev in node.events
        ],
    }


def _node_from_json(obj: dict) -> PolicyNode:
    events = []
    for ev in obj.get("events", []):
        events.append(SplitEvent(
            time_index=int(ev["time_index"]),
            cell=None if ev.get("cell") is None else int(ev["cell"]),
            branches=tuple(
                (_entry_from_json(b["weight"]), _node_from_json(b["child"]))
                for b in ev["branches"]
            ),
        ))
    return PolicyNode(belief=tuple(_entry_from_json(w) for w in obj["belief"]),
                      events=tuple(events))


def policy_to_dict(policy: BeliefPolicy) -> dict:
    return {
        "format": "belief-policy",
        "version": 1,
        "grid": {"t0": policy.grid.t0, "t_end": policy.grid.t_end,
                 "n_steps": policy.grid.n_steps},
        "partition": (None if policy.partition is None
                      else {"breaks": [list(bs) for bs in policy.partition.breaks]}),
        "apply_terminal_rule": policy.apply_terminal_rule,
        "root": _node_to_json(policy.root),
    }


def policy_from_dict(obj: dict) -> BeliefPolicy:
    if obj.get("format") != "belief-policy":
        raise ValidationError("not a belief-policy document")
    g = obj["grid"]
    grid = TimeGrid(float(g["t0"]), float(g["t_end"]), int(g["n_steps"]))
    part = obj.get("partition")
    partition = (None if part is None
                 else StatePartition(tuple(tuple(float(b) for b in bs)
                                           for bs in part["breaks"])))
    return BeliefPolicy(_node_from_json(obj["root"]), grid, partition,
                        apply_terminal_rule=bool(obj.get("apply_terminal_rule", True)))


def save_policy(policy: BeliefPolicy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy_to_dict(policy), fh, indent=2)


def load_policy(path) -> BeliefPolicy:
    with open(path, "r", encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))
