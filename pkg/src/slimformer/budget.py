"""Parameter-budget planning across embedding, encoder, classifier groups.

An overall retained fraction P is split per group by the constraint

    P * total = p_embd * |embedding| + (p_svd * p_weight) * |encoder| + |classifier|

with the classifier group never compressed.  solve_budget rearranges this
for p_weight.  allocate turns a plan into exact integer retained counts
per matrix: factor pairs get rank-floored storage, bias and norm vectors
stay dense, and the remaining budget is spread over the encoder factor
masks by largest-remainder rounding, so a feasible plan lands on
round(P * total) exactly.  plan_check reports that simulation per group.

Budget arithmetic needs only shapes and groups, never values, so the
functions here accept either a ParamBundle or a ShapeTable; the latter
makes full-size reference checks cheap.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleBudgetError, InputError, RangeError
from .factorize import rank_for_ratio
from .tensor import GROUPS


def _check_fraction(name, value):
    if not 0.0 < value <= 1.0:
        raise RangeError(f"{name} must be in (0, 1], got {value}")


@dataclass(frozen=True)
class ShapeEntry:
    name: str
    group: str
    rows: int
    cols: int

    @property
    def size(self):
        return self.rows * self.cols

    @property
    def is_vector(self):
        """Vectors (and 1x1 scalars) cannot be factorized; they stay dense."""
        return min(self.rows, self.cols) == 1


class ShapeTable:
    """Shapes and group tags of a bundle; enough for budget arithmetic."""

    def __init__(self, entries):
        rows = []
        seen = set()
        for name, group, m, n in entries:
            if group not in GROUPS:
                raise InputError(f"unknown group {group!r} for entry {name!r}")
            if name in seen:
                raise InputError(f"duplicate entry name {name!r}")
            if m < 1 or n < 1:
                raise RangeError(f"entry {name!r} has empty shape {m}x{n}")
            seen.add(name)
            rows.append(ShapeEntry(name, group, int(m), int(n)))
        self._entries = tuple(rows)

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    @classmethod
    def from_bundle(cls, bundle):
        return cls(
            (name, bundle.group_of(name), bundle.matrix(name).rows,
             bundle.matrix(name).cols)
            for name in bundle.names()
        )

    @classmethod
    def coerce(cls, source):
        if isinstance(source, cls):
            return source
        return cls.from_bundle(source)

    def group_total(self, group=None):
        return sum(e.size for e in self._entries
                   if group is None or e.group == group)


def transformer_shapes(vocab_size, embed_dim, num_layers, ffn_dim,
                       max_seq_len, num_classes, token_type_count=0,
                       embed_layernorm=False, pooler=False):
    """Shape table of a standard encoder-classifier stack.

    This is the single source of truth for parameter naming: the toy
    model builds its bundles in exactly this order.  The optional pieces
    (token-type embeddings, embedding layer norm, pooler) reproduce the
    full-size reference architecture used by the planning checks.
    """
    entries = [
        ("tok_embed", "embedding", vocab_size, embed_dim),
        ("pos_embed", "embedding", max_seq_len, embed_dim),
    ]
    if token_type_count:
        entries.append(("type_embed", "embedding", token_type_count, embed_dim))
    if embed_layernorm:
        entries.append(("embed_ln.gamma", "embedding", 1, embed_dim))
        entries.append(("embed_ln.beta", "embedding", 1, embed_dim))
    for i in range(num_layers):
        p = f"enc{i}"
        for w in ("wq", "wk", "wv", "wo"):
            entries.append((f"{p}.attn.{w}", "encoder", embed_dim, embed_dim))
        for b in ("bq", "bk", "bv", "bo"):
            entries.append((f"{p}.attn.{b}", "encoder", 1, embed_dim))
        entries.append((f"{p}.ln1.gamma", "encoder", 1, embed_dim))
        entries.append((f"{p}.ln1.beta", "encoder", 1, embed_dim))
        entries.append((f"{p}.ffn.w1", "encoder", embed_dim, ffn_dim))
        entries.append((f"{p}.ffn.b1", "encoder", 1, ffn_dim))
        entries.append((f"{p}.ffn.w2", "encoder", ffn_dim, embed_dim))
        entries.append((f"{p}.ffn.b2", "encoder", 1, embed_dim))
        entries.append((f"{p}.ln2.gamma", "encoder", 1, embed_dim))
        entries.append((f"{p}.ln2.beta", "encoder", 1, embed_dim))
    if pooler:
        entries.append(("pool.w", "classifier", embed_dim, embed_dim))
        entries.append(("pool.b", "classifier", 1, embed_dim))
    entries.append(("cls.w", "classifier", embed_dim, num_classes))
    entries.append(("cls.b", "classifier", 1, num_classes))
    return ShapeTable(entries)


@dataclass(frozen=True)
class CompressionPlan:
    """Target fractions: overall, per-group, and the per-iteration delta."""

    p_overall: float
    p_embd: float
    p_svd: float
    p_weight: float
    delta: float = 0.9
    seed: int = None
    notes: tuple = ()

    def __post_init__(self):
        _check_fraction("p_overall", self.p_overall)
        _check_fraction("p_embd", self.p_embd)
        _check_fraction("p_svd", self.p_svd)
        _check_fraction("p_weight", self.p_weight)
        if not 0.0 < self.delta < 1.0:
            raise RangeError(f"delta must be in (0, 1), got {self.delta}")
        object.__setattr__(self, "notes", tuple(self.notes))


def implied_overall(shapes, p_embd, p_svd, p_weight):
    """Overall retained fraction implied by the three group fractions."""
    shapes = ShapeTable.coerce(shapes)
    total = shapes.group_total()
    return (p_embd * shapes.group_total("embedding")
            + p_svd * p_weight * shapes.group_total("encoder")
            + shapes.group_total("classifier")) / total


def plan_from_fractions(shapes, p_embd, p_svd, p_weight, delta=0.9):
    """Plan carrying given group fractions; p_overall is the implied value."""
    overall = implied_overall(shapes, p_embd, p_svd, p_weight)
    return CompressionPlan(overall, p_embd, p_svd, p_weight, delta=delta)


def solve_budget(shapes, p_overall, p_embd, p_svd, delta=0.9):
    """Solve the budget constraint for p_weight.

    p_weight = (P*total - p_embd*|embedding| - |classifier|) / (p_svd*|encoder|),
    clamped to 1 with an unmet-budget note when the model can satisfy P
    without pruning.  Raises InfeasibleBudgetError when the budget cannot
    cover the untouched groups, or when rank-floored storage alone
    already exceeds it.
    """
    shapes = ShapeTable.coerce(shapes)
    _check_fraction("p_overall", p_overall)
    _check_fraction("p_embd", p_embd)
    _check_fraction("p_svd", p_svd)
    total = shapes.group_total()
    embd = shapes.group_total("embedding")
    encd = shapes.group_total("encoder")
    cls_count = shapes.group_total("classifier")
    if encd == 0:
        raise InfeasibleBudgetError("bundle has no encoder parameters", slack=0.0)
    numerator = p_overall * total - p_embd * embd - cls_count
    if numerator <= 0.0:
        raise InfeasibleBudgetError(
            f"budget {p_overall} * {total} params cannot cover the embedding "
            f"target and the untouched classifier; short by {-numerator:.1f}",
            slack=numerator,
        )
    p_weight = numerator / (p_svd * encd)
    notes = []
    if p_weight > 1.0:
        unmet = numerator - p_svd * encd
        notes.append(
            f"p_weight clamped from {p_weight:.6f} to 1; "
            f"unmet budget {unmet:.1f} params"
        )
        p_weight = 1.0
    plan = CompressionPlan(p_overall, p_embd, p_svd, p_weight,
                           delta=delta, notes=tuple(notes))
    alloc = allocate(shapes, plan)  # raises when floors alone bust the budget
    if alloc.retained_count < alloc.target_count:
        shortfall = alloc.target_count - alloc.retained_count
        plan = replace(plan, notes=plan.notes + (
            f"rank-floored storage cannot reach the target; "
            f"unmet budget {shortfall} params",
        ))
    return plan


@dataclass(frozen=True)
class EntryPlan:
    """Exact retained-count decision for one bundle entry.

    kind "dense": untouched.  kind "masked": dense matrix pruned to
    `ones` entries.  kind "factored": rank-`rank` pair with `ones_a` and
    `ones_b` mask ones on the two halves.
    """

    name: str
    group: str
    rows: int
    cols: int
    kind: str
    rank: int = 0
    ones: int = 0
    ones_a: int = 0
    ones_b: int = 0

    @property
    def retained(self):
        if self.kind == "dense":
            return self.rows * self.cols
        if self.kind == "masked":
            return self.ones
        return self.ones_a + self.ones_b


@dataclass(frozen=True)
class Allocation:
    entries: tuple
    target_count: int
    retained_count: int
    mask_fraction: float
    notes: tuple

    def entry(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise InputError(f"no allocation entry named {name!r}")


def _largest_remainder(budget, cells):
    """Integer split of budget proportional to cells, summing exactly."""
    total = sum(cells)
    quotas = [budget * c / total for c in cells]
    base = [math.floor(q) for q in quotas]
    leftover = budget - sum(base)
    order = sorted(range(len(cells)), key=lambda i: (base[i] - quotas[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def allocate(shapes, plan):
    """Exact integer retained counts realizing the plan on a bundle.

    Classifier entries and all vectors stay dense.  Embedding matrices
    are factorized at p_embd, encoder matrices at p_svd (rank floored);
    a fraction of exactly 1.0 skips that stage, so the identity plan is
    a true no-op and p_svd=1 means pruning acts on the dense matrices.
    The leftover budget round(p_overall * total) minus everything fixed
    becomes the encoder mask ones, split over the mask units (factor
    halves, or dense matrices when unfactorized) by largest-remainder
    rounding, so the total retained count hits the target whenever it
    is reachable.
    """
    shapes = ShapeTable.coerce(shapes)
    total = shapes.group_total()
    target = int(math.floor(plan.p_overall * total + 0.5))
    notes = list(plan.notes)

    entries = []
    unit_cells = []  # encoder mask units: factor halves or dense matrices
    unit_slots = []  # (entry index, "a" | "b" | "dense")
    fixed = 0
    for e in shapes:
        if e.group == "classifier" or e.is_vector:
            entries.append(EntryPlan(e.name, e.group, e.rows, e.cols, "dense"))
            fixed += e.size
        elif e.group == "embedding":
            if plan.p_embd == 1.0:
                entries.append(EntryPlan(e.name, e.group, e.rows, e.cols,
                                         "dense"))
                fixed += e.size
                continue
            r = rank_for_ratio(e.rows, e.cols, plan.p_embd)
            entries.append(EntryPlan(e.name, e.group, e.rows, e.cols,
                                     "factored", rank=r,
                                     ones_a=e.rows * r, ones_b=e.cols * r))
            fixed += (e.rows + e.cols) * r
        elif plan.p_svd == 1.0:
            idx = len(entries)
            entries.append(EntryPlan(e.name, e.group, e.rows, e.cols,
                                     "masked"))
            unit_slots.append((idx, "dense"))
            unit_cells.append(e.size)
        else:
            r = rank_for_ratio(e.rows, e.cols, plan.p_svd)
            idx = len(entries)
            entries.append(EntryPlan(e.name, e.group, e.rows, e.cols,
                                     "factored", rank=r))
            unit_slots.append((idx, "a"))
            unit_cells.append(e.rows * r)
            unit_slots.append((idx, "b"))
            unit_cells.append(e.cols * r)

    mask_budget = target - fixed
    if mask_budget < 0:
        raise InfeasibleBudgetError(
            f"dense and rank-floored storage already holds {fixed} params, "
            f"{-mask_budget} over the target {target}",
            slack=float(-mask_budget),
        )

    storage = sum(unit_cells)
    if storage == 0:
        ones = []
        if mask_budget > 0:
            notes.append(f"no encoder factor storage; {mask_budget} params "
                         "of budget left unused")
        mask_fraction = 1.0
    elif mask_budget >= storage:
        ones = list(unit_cells)
        if mask_budget > storage:
            notes.append(f"budget exceeds encoder factor storage by "
                         f"{mask_budget - storage} params; masks disabled")
        mask_fraction = 1.0
    else:
        ones = _largest_remainder(mask_budget, unit_cells)
        mask_fraction = mask_budget / storage

    for (idx, half), k in zip(unit_slots, ones):
        e = entries[idx]
        if half == "a":
            entries[idx] = replace(e, ones_a=k)
        elif half == "b":
            entries[idx] = replace(e, ones_b=k)
        else:
            entries[idx] = replace(e, ones=k)

    retained = sum(e.retained for e in entries)
    return Allocation(tuple(entries), target, retained,
                      mask_fraction, tuple(notes))


@dataclass(frozen=True)
class GroupReport:
    group: str
    target_fraction: float
    original: int
    retained: int

    @property
    def achieved_fraction(self):
        return self.retained / self.original if self.original else 1.0


@dataclass(frozen=True)
class PlanReport:
    plan: CompressionPlan
    total_params: int
    retained_count: int
    feasible: bool
    groups: tuple
    violations: tuple
    allocation: Allocation = None

    @property
    def achieved_overall(self):
        return self.retained_count / self.total_params

    def lines(self):
        out = [f"total params        {self.total_params}"]
        if self.feasible:
            out.append(f"retained params     {self.retained_count}")
            out.append(f"achieved overall    {self.achieved_overall:.6f} "
                       f"(target {self.plan.p_overall:.6f})")
            for g in self.groups:
                out.append(f"group {g.group:<12} target {g.target_fraction:.6f}"
                           f"  achieved {g.achieved_fraction:.6f}"
                           f"  ({g.retained} of {g.original})")
        else:
            out.append("plan is INFEASIBLE")
        for v in self.violations:
            out.append(f"violation: {v}")
        if self.allocation is not None:
            for n in self.allocation.notes:
                out.append(f"note: {n}")
        return out


def plan_check(shapes, plan):
    """Simulate the plan per matrix and report achieved vs. target."""
    shapes = ShapeTable.coerce(shapes)
    total = shapes.group_total()
    try:
        alloc = allocate(shapes, plan)
    except InfeasibleBudgetError as exc:
        return PlanReport(plan, total, 0, False, (), (str(exc),), None)

    targets = {
        "embedding": plan.p_embd,
        "encoder": plan.p_svd * plan.p_weight,
        "classifier": 1.0,
    }
    groups = []
    for group in GROUPS:
        original = shapes.group_total(group)
        if original == 0:
            continue
        retained = sum(e.retained for e in alloc.entries if e.group == group)
        groups.append(GroupReport(group, targets[group], original, retained))

    violations = []
    achieved = alloc.retained_count / total
    if abs(achieved - plan.p_overall) > 0.01 * plan.p_overall:
        violations.append(
            f"achieved overall {achieved:.6f} misses target "
            f"{plan.p_overall:.6f} by more than 1%"
        )
    return PlanReport(plan, total, alloc.retained_count, True,
                      tuple(groups), tuple(violations), alloc)


def random_search(shapes, p_overall, trials, evaluator, seed=0, delta=0.9):
    """Best-scoring feasible plan over sampled (p_embd, p_svd) pairs.

    p_embd is drawn log-uniform on [0.15, 1], p_svd on [0.3, 0.6];
    p_weight is solved per sample.  Ties keep the earliest sample, so a
    constant evaluator returns the first feasible plan.
    """
    shapes = ShapeTable.coerce(shapes)
    if trials < 1:
        raise RangeError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    best = None
    best_score = -math.inf
    for _ in range(trials):
        p_embd = float(np.exp(rng.uniform(np.log(0.15), np.log(1.0))))
        p_svd = float(np.exp(rng.uniform(np.log(0.3), np.log(0.6))))
        try:
            plan = solve_budget(shapes, p_overall, p_embd, p_svd, delta=delta)
        except InfeasibleBudgetError:
            continue
        score = evaluator(plan)
        if best is None or score > best_score:
            best = replace(plan, seed=seed)
            best_score = score
    if best is None:
        raise InfeasibleBudgetError(
            f"no feasible plan found in {trials} trials at P={p_overall}",
            slack=0.0,
        )
    return best


def save_plan(plan, path):
    """Write a plan as human-readable key=value lines."""
    lines = [
        f"p_overall={plan.p_overall!r}",
        f"p_embd={plan.p_embd!r}",
        f"p_svd={plan.p_svd!r}",
        f"p_weight={plan.p_weight!r}",
        f"delta={plan.delta!r}",
        f"seed={'none' if plan.seed is None else plan.seed}",
        f"notes={'|'.join(plan.notes)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_plan(path):
    try:
        text = Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read plan file {path}: {exc}") from exc
    data = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"malformed plan line {line!r}")
        key, value = line.split("=", 1)
        data[key.strip()] = value.strip()
    try:
        seed = data.get("seed", "none")
        notes = data.get("notes", "")
        return CompressionPlan(
            p_overall=float(data["p_overall"]),
            p_embd=float(data["p_embd"]),
            p_svd=float(data["p_svd"]),
            p_weight=float(data["p_weight"]),
            delta=float(data.get("delta", 0.9)),
            seed=None if seed == "none" else int(seed),
            notes=tuple(n for n in notes.split("|") if n),
        )
    except KeyError as exc:
        raise InputError(f"plan file {path} is missing key {exc}") from exc
    except ValueError as exc:
        raise InputError(f"plan file {path} has a bad value: {exc}") from exc
