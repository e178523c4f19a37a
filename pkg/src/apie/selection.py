"""Exemplar selection: the uncertainty-ranked strategy plus the baselines
it is compared against, and the label-resolution step that turns selected
samples into prompt-ready exemplars.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from .errors import AnnotationTimeout, MissingGold, SelectionError
from .model import RunConfig, Sample, UncertaintyScores
from .prompting import Exemplar

STRATEGIES = ("apie", "zsl", "rsl", "kd_sort", "active_prompt")


@dataclass(frozen=True)
class SelectionResult:
    strategy: str
    selected_ids: tuple[str, ...]
    seed: int
    n: int
    weights: dict = field(default_factory=dict)
    scores: dict[str, UncertaintyScores] = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "n": self.n,
            "selected_ids": list(self.selected_ids),
            "weights": dict(self.weights),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "SelectionResult":
        return cls(
            strategy=obj["strategy"],
            selected_ids=tuple(obj["selected_ids"]),
            seed=obj["seed"],
            n=obj["n"],
            weights=dict(obj.get("weights", {})),
        )


def _check_n(n: int, pool_size: int) -> None:
    if pool_size == 0:
        raise SelectionError("empty_pool", "cannot select from an empty pool")
    if n < 1:
        raise SelectionError("n_too_small", f"selection size must be >= 1, got {n}")
    if n > pool_size:
        raise SelectionError(
            "n_exceeds_pool", f"cannot select {n} from a pool of {pool_size}")


def rank_and_select(
    pool_scores: list[UncertaintyScores],
    n: int,
    seed: int = 0,
    weights: dict | None = None,
    strategy: str = "apie",
    key=lambda s: s.u_total,
) -> SelectionResult:
    """Top-n by the ranking key, descending; ties broken by ascending id."""
    _check_n(n, len(pool_scores))
    ranked = sorted(pool_scores, key=lambda s: (-key(s), s.sample_id))
    chosen = ranked[:n]
    return SelectionResult(
        strategy=strategy,
        selected_ids=tuple(s.sample_id for s in chosen),
        seed=seed,
        n=n,
        weights=weights or {},
        scores={s.sample_id: s for s in chosen},
    )


def select_active_prompt(pool_scores: list[UncertaintyScores], n: int,
                         seed: int = 0) -> SelectionResult:
    """Rank by normalized generation disagreement alone; equivalent to the
    full ranking with weights (1, 0, 0)."""
    return rank_and_select(pool_scores, n, seed=seed,
                           weights={"alpha": 1.0, "beta": 0.0, "gamma": 0.0},
                           strategy="active_prompt", key=lambda s: s.u_d_norm)


def select_random(pool: list[Sample], n: int, seed: int) -> SelectionResult:
    _check_n(n, len(pool))
    chosen = random.Random(seed).sample(pool, n)
    return SelectionResult(
        strategy="rsl",
        selected_ids=tuple(s.id for s in chosen),
        seed=seed,
        n=n,
    )


def knowledge_density(sample: Sample) -> float:
    """Gold tuples per whitespace token; unlabeled samples fall back to the
    fraction of capitalized tokens as a crude proxy for entity richness."""
    tokens = sample.text.split()
    if not tokens:
        return 0.0
    if sample.gold is not None:
        return len(sample.gold) / len(tokens)
    capitalized = sum(1 for t in tokens if t[0].isupper())
    return capitalized / len(tokens)


def select_kd_sort(pool: list[Sample], n: int, seed: int = 0) -> SelectionResult:
    _check_n(n, len(pool))
    ranked = sorted(pool, key=lambda s: (-knowledge_density(s), s.id))
    return SelectionResult(
        strategy="kd_sort",
        selected_ids=tuple(s.id for s in ranked[:n]),
        seed=seed,
        n=n,
    )


def select_zsl(seed: int = 0) -> SelectionResult:
    return SelectionResult(strategy="zsl", selected_ids=(), seed=seed, n=0)


def run_strategy(
    strategy: str,
    cfg: RunConfig,
    n: int,
    pool: list[Sample],
    pool_scores: list[UncertaintyScores] | None = None,
) -> SelectionResult:
    """Dispatch on strategy name, with the score-based strategies requiring a
    scored pool."""
    if strategy == "zsl":
        return select_zsl(seed=cfg.seed)
    if strategy == "rsl":
        return select_random(pool, n, seed=cfg.seed)
    if strategy == "kd_sort":
        return select_kd_sort(pool, n, seed=cfg.seed)
    if pool_scores is None:
        raise SelectionError("scores_required",
                             f"strategy {strategy!r} needs uncertainty scores")
    if strategy == "apie":
        weights = {"alpha": cfg.alpha, "beta": cfg.beta, "gamma": cfg.gamma}
        return rank_and_select(pool_scores, n, seed=cfg.seed, weights=weights)
    if strategy == "active_prompt":
        return select_active_prompt(pool_scores, n, seed=cfg.seed)
    raise SelectionError("unknown_strategy", f"unknown strategy {strategy!r}")


def resolve_labels(
    selection: SelectionResult,
    pool: list[Sample],
    mode: str = "gold_lookup",
    store=None,
    timeout: float = 300.0,
    poll_interval: float = 0.25,
) -> list[Exemplar]:
    """Turn selected ids into labeled exemplars, in selection order.

    gold_lookup simulates the expert with the dataset's own labels;
    annotation_service waits for a human to submit labels through the
    annotation store (see the store module), failing after the deadline.
    """
    by_id = {s.id: s for s in pool}
    for sid in selection.selected_ids:
        if sid not in by_id:
            raise SelectionError("id_not_in_pool", f"selected id {sid!r} not in pool")

    if mode == "gold_lookup":
        exemplars = []
        for sid in selection.selected_ids:
            sample = by_id[sid]
            if sample.gold is None:
                raise MissingGold(sid)
            exemplars.append(Exemplar(input=sample.text, output=sample.gold))
        return exemplars

    if mode == "annotation_service":
        if store is None:
            raise SelectionError("store_required",
                                 "annotation_service mode needs an annotation store")
        deadline = time.monotonic() + timeout
        while True:
            pending = [sid for sid in selection.selected_ids
                       if store.label_for(sid) is None]
            if not pending:
                break
            if time.monotonic() >= deadline:
                raise AnnotationTimeout(
                    f"labels still pending after {timeout:.0f}s: {', '.join(pending)}")
            time.sleep(poll_interval)
        return [Exemplar(input=by_id[sid].text, output=store.label_for(sid))
                for sid in selection.selected_ids]

    raise SelectionError("unknown_mode", f"unknown label resolution mode {mode!r}")


def exemplar_prompt_order(selection: SelectionResult,
                          exemplars: list[Exemplar]) -> list[Exemplar]:
    """Selection lists ids most-uncertain first; prompts place the most
    uncertain exemplar last, nearest the target. One reversal, applied
    uniformly to every strategy."""
    return list(reversed(exemplars))
