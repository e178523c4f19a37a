"""Uncertainty signals over a sample's k probe generations.

Three signals: raw-text disagreement (average pairwise edit distance),
format instability (parse failures plus structural disagreement of the
valid outputs), and content divergence (one minus average pairwise Jaccard
of the extracted tuple sets). Signals are min-max normalized over the pool
and combined as a weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations
from typing import Sequence

from .errors import ConfigError, ContractViolation
from .model import ExtractionSet, RunConfig, UncertaintyScores
from .parsing import ParseOutcome


@dataclass(frozen=True)
class ProbeSet:
    """The k raw generations for one sample plus their parse outcomes."""

    sample_id: str
    generations: tuple[str, ...]
    outcomes: tuple[ParseOutcome, ...]

    def __post_init__(self):
        if len(self.generations) != len(self.outcomes):
            raise ContractViolation("generations and outcomes must have equal length")

    @property
    def k(self) -> int:
        return len(self.generations)

    def valid_outcomes(self) -> list[ParseOutcome]:
        return [o for o in self.outcomes if o.ok]


def levenshtein(a: str, b: str) -> int:
    """Minimum single-character insertions/deletions/substitutions turning a into b."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(b) > len(a):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        append = current.append
        for j, cb in enumerate(b, 1):
            cost = 0 if ca == cb else 1
            append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def pairwise_disagreement(probe: ProbeSet, per_pair_normalize: bool = False) -> float:
    """Mean Levenshtein distance over all unordered pairs of raw generations.

    With per_pair_normalize each pair's distance is divided by the longer
    string's length (a pair of two empty strings contributes 0).
    """
    if probe.k < 2:
        raise ContractViolation(f"pairwise disagreement needs k >= 2, got {probe.k}")
    total = 0.0
    pairs = 0
    for a, b in combinations(probe.generations, 2):
        d = levenshtein(a, b)
        if per_pair_normalize:
            longest = max(len(a), len(b))
            total += d / longest if longest else 0.0
        else:
            total += d
        pairs += 1
    return total / pairs


def parsing_failure_rate(probe: ProbeSet) -> float:
    if probe.k < 1:
        raise ContractViolation("parsing_failure_rate needs k >= 1")
    return sum(1 for o in probe.outcomes if not o.ok) / probe.k


def _signature_pair_distance(sa, sb) -> float:
    keysets_a = set(sa.keyset_profile)
    keysets_b = set(sb.keyset_profile)
    if not keysets_a and not keysets_b:
        keyset_jaccard = 1.0
    else:
        union = keysets_a | keysets_b
        keyset_jaccard = len(keysets_a & keysets_b) / len(union)
    length_gap = abs(sa.length - sb.length) / max(sa.length, sb.length, 1)
    return 0.5 * (1.0 - keyset_jaccard) + 0.5 * length_gap


def structural_disagreement(probe: ProbeSet) -> float:
    """Mean pairwise shape distance over the valid outputs' signatures; 0 when
    fewer than two outputs parsed (a lone failure is already priced into r_fail)."""
    signatures = [o.signature for o in probe.valid_outcomes()]
    if len(signatures) <= 1:
        return 0.0
    distances = [_signature_pair_distance(sa, sb) for sa, sb in combinations(signatures, 2)]
    return sum(distances) / len(distances)


def format_uncertainty(probe: ProbeSet, lambda_fail: float = 0.5, lambda_struct: float = 0.5) -> float:
    if lambda_fail < 0 or lambda_struct < 0 or abs(lambda_fail + lambda_struct - 1.0) > 1e-9:
        raise ConfigError(
            "invalid_lambda",
            f"format-signal weights must be >= 0 and sum to 1, got ({lambda_fail}, {lambda_struct})",
        )
    return lambda_fail * parsing_failure_rate(probe) + lambda_struct * structural_disagreement(probe)


def jaccard_similarity(a: ExtractionSet, b: ExtractionSet) -> float:
    """Set overlap of two extraction sets; two empty sets agree perfectly (1.0)."""
    if not a.tuples and not b.tuples:
        return 1.0
    union = a.tuples | b.tuples
    return len(a.tuples & b.tuples) / len(union)


def content_uncertainty(probe: ProbeSet) -> float:
    """One minus the mean pairwise Jaccard over the valid extraction sets.

    No valid output gives no semantic evidence at all (1.0); a single valid
    output shows no internal disagreement (0.0).
    """
    extraction_sets = [o.extractions for o in probe.valid_outcomes()]
    if not extraction_sets:
        return 1.0
    if len(extraction_sets) == 1:
        return 0.0
    sims = [jaccard_similarity(a, b) for a, b in combinations(extraction_sets, 2)]
    return 1.0 - sum(sims) / len(sims)


def minmax_normalize(values: Sequence[float]) -> list[float]:
    """Map to [0, 1] over the pool; a constant list maps to all zeros."""
    if not values:
        raise ContractViolation("cannot normalize an empty list")
    lo = min(values)
    hi = max(values)
    if hi == lo:
        return [0.0] * len(values)
    span = hi - lo
    return [(v - lo) / span for v in values]


def total_uncertainty(norm_scores: tuple[float, float, float], cfg: RunConfig) -> float:
    for name, v in zip(("u_d", "u_f", "u_c"), norm_scores):
        if not -1e-12 <= v <= 1.0 + 1e-12:
            raise ContractViolation(f"normalized {name} out of [0,1]: {v}")
    u_d, u_f, u_c = norm_scores
    return cfg.alpha * u_d + cfg.beta * u_f + cfg.gamma * u_c


def score_probe(probe: ProbeSet, cfg: RunConfig) -> UncertaintyScores:
    """Raw per-sample signals; normalized fields are filled by score_pool."""
    r_fail = parsing_failure_rate(probe)
    s_dis = structural_disagreement(probe)
    return UncertaintyScores(
        sample_id=probe.sample_id,
        u_d_raw=pairwise_disagreement(probe, cfg.normalize_levenshtein_per_pair),
        r_fail=r_fail,
        s_dis=s_dis,
        u_f_raw=cfg.lambda_fail * r_fail + cfg.lambda_struct * s_dis,
        u_c_raw=content_uncertainty(probe),
        k_valid=len(probe.valid_outcomes()),
    )


def score_pool(probes: Sequence[ProbeSet], cfg: RunConfig) -> list[UncertaintyScores]:
    """Score every probe set, normalize each signal over the pool, and combine.

    Normalization is a barrier: every raw score must exist before any total.
    """
    raw = [score_probe(p, cfg) for p in probes]
    u_d = minmax_normalize([s.u_d_raw for s in raw])
    u_f = minmax_normalize([s.u_f_raw for s in raw])
    u_c = minmax_normalize([s.u_c_raw for s in raw])
    scored = []
    for s, d, f, c in zip(raw, u_d, u_f, u_c):
        scored.append(
            replace(
                s,
                u_d_norm=d,
                u_f_norm=f,
                u_c_norm=c,
                u_total=total_uncertainty((d, f, c), cfg),
            )
        )
    return scored
