"""Training cost of active selection versus full training, in sequence-iterations.

One sequence-iteration is one pass of one sequence through the network,
either a training epoch or an inference pass.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class BudgetParams:
    total: int = 69
    initial: int = 6
    h: int = 5
    iter: int = 7
    e_init: int = 15
    e_round: int = 5
    e_full: int = 50

    def __post_init__(self):
        for name, v in asdict(self).items():
            # zero rounds is allowed: selection then stops at the initial set
            lo = 0 if name == "iter" else 1
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ValueError(f"{name} must be an integer >= {lo}, got {v!r}")
        if self.initial + self.h * self.iter > self.total:
            raise ValueError(
                f"initial + h*iter = {self.initial + self.h * self.iter} exceeds the pool of {self.total}"
            )


@dataclass(frozen=True)
class CostReport:
    L_full: int
    L_train: int
    L_remain: int
    selected: int
    total: int

    @property
    def L_active_total(self) -> int:
        return self.L_train + self.L_remain

    @property
    def selected_fraction(self) -> float:
        return self.selected / self.total

    def to_dict(self) -> dict:
        return {
            "L_full": self.L_full,
            "L_train": self.L_train,
            "L_remain": self.L_remain,
            "L_active_total": self.L_active_total,
            "selected": self.selected,
            "total": self.total,
            "selected_percent": round(100 * self.selected_fraction, 1),
        }


def cost_full(p: BudgetParams) -> int:
    return p.total * p.e_full


def cost_active_train(p: BudgetParams, train_rounds: int) -> int:
    """Initial training plus ``e_round`` epochs on the grown set after each round."""
    if train_rounds < 0:
        raise ValueError("train_rounds must be >= 0")
    return p.initial * p.e_init + sum(
        (p.initial + p.h * itr) * p.e_round for itr in range(1, train_rounds + 1)
    )


def cost_active_infer(p: BudgetParams, infer_rounds: int) -> int:
    """One inference pass over every still-unselected sequence per round."""
    if infer_rounds < 0:
        raise ValueError("infer_rounds must be >= 0")
    rest = p.total - p.initial
    cost = rest
    for itr in range(1, infer_rounds + 1):
        left = rest - p.h * itr
        if left < 0:
            raise ValueError(f"round {itr}: {left} sequences remaining")
        cost += left
    return cost


def report(p: BudgetParams, train_rounds: int = 7, infer_rounds: int = 6) -> CostReport:
    """Cost comparison; the selected count assumes ``infer_rounds`` admission rounds."""
    selected = min(p.total, p.initial + p.h * infer_rounds)
    return CostReport(
        cost_full(p),
        cost_active_train(p, train_rounds),
        cost_active_infer(p, infer_rounds),
        selected,
        p.total,
    )


def format_report(r: CostReport) -> str:
    pct = f"{100 * r.selected_fraction:.1f}%"
    rows = [
        ("Full training (100%)", "", r.L_full),
        (f"Active selection ({pct})", "Training", r.L_train),
        ("", "Inference", r.L_remain),
        ("", "Total", r.L_active_total),
    ]
    w = max(len(a) for a, _, _ in rows)
    lines = [f"{'Setting':<{w}}  {'Stage':<9}  Sequence-iterations"]
    lines += [f"{a:<{w}}  {b:<9}  {c}" for a, b, c in rows]
    lines.append(f"selected {r.selected}/{r.total} sequences = {pct}")
    lines.append(f"L_full = {r.L_full}, L_train = {r.L_train}, L_remain = {r.L_remain}, total = {r.L_active_total}")
    return "\n".join(lines)


def report_json(r: CostReport) -> str:
    return json.dumps(r.to_dict(), indent=2, sort_keys=True)
