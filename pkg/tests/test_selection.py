import pytest

from conftest import make_probe
from apie.errors import AnnotationTimeout, MissingGold, SelectionError
from apie.model import (
    ExtractionSet,
    ExtractionTuple,
    RunConfig,
    Sample,
    UncertaintyScores,
    validate_config,
)
from apie.selection import (
    SelectionResult,
    exemplar_prompt_order,
    knowledge_density,
    rank_and_select,
    resolve_labels,
    run_strategy,
    select_active_prompt,
    select_kd_sort,
    select_random,
    select_zsl,
)


def us(sample_id: str, u_total: float = 0.0, u_d_norm: float = 0.0) -> UncertaintyScores:
    return UncertaintyScores(sample_id=sample_id, u_d_raw=0, r_fail=0, s_dis=0,
                             u_f_raw=0, u_c_raw=0, k_valid=3,
                             u_d_norm=u_d_norm, u_f_norm=0, u_c_norm=0, u_total=u_total)


GOLD = ExtractionSet.of([ExtractionTuple.entity("PER", "A")])


def pool_of(n: int, gold: bool = True) -> list[Sample]:
    return [Sample(id=f"s{i:02d}", text=f"sample text {i}", gold=GOLD if gold else None)
            for i in range(n)]


class TestRankAndSelect:
    def test_top_n_descending(self):
        scores = [us("a", 0.9), us("b", 0.1), us("c", 0.5)]
        result = rank_and_select(scores, 2)
        assert result.selected_ids == ("a", "c")

    def test_tie_break_ascending_id(self):
        scores = [us("b", 0.5), us("a", 0.5)]
        assert rank_and_select(scores, 1).selected_ids == ("a",)

    def test_n_exceeds_pool(self):
        with pytest.raises(SelectionError) as err:
            rank_and_select([us("a"), us("b"), us("c")], 4)
        assert err.value.kind == "n_exceeds_pool"

    def test_empty_pool(self):
        with pytest.raises(SelectionError) as err:
            rank_and_select([], 1)
        assert err.value.kind == "empty_pool"

    def test_selected_scores_attached(self):
        scores = [us("a", 0.9), us("b", 0.1)]
        result = rank_and_select(scores, 1)
        assert result.scores["a"].u_total == 0.9

    def test_ids_unique_and_from_pool(self):
        scores = [us(f"s{i}", i / 10) for i in range(8)]
        result = rank_and_select(scores, 5)
        assert len(set(result.selected_ids)) == 5
        assert set(result.selected_ids) <= {s.sample_id for s in scores}


class TestSelectRandom:
    def test_reproducible(self):
        pool = pool_of(10)
        assert select_random(pool, 3, seed=5).selected_ids == \
            select_random(pool, 3, seed=5).selected_ids

    def test_full_pool_is_permutation(self):
        pool = pool_of(6)
        result = select_random(pool, 6, seed=1)
        assert sorted(result.selected_ids) == [s.id for s in pool]

    def test_seeds_differ_somewhere(self):
        pool = pool_of(10)
        picks = {select_random(pool, 1, seed=s).selected_ids for s in range(100)}
        assert len(picks) > 1


class TestKdSort:
    def test_density_from_gold(self):
        gold3 = ExtractionSet.of([
            ExtractionTuple.entity("PER", "A"),
            ExtractionTuple.entity("ORG", "B"),
            ExtractionTuple.entity("LOC", "C"),
        ])
        s = Sample(id="x", text="one two three four five six seven eight nine ten",
                   gold=gold3)
        assert knowledge_density(s) == pytest.approx(0.3)

    def test_capitalization_fallback(self):
        s = Sample(id="x", text="Alice met Bob in Paris today")
        assert knowledge_density(s) == pytest.approx(3 / 6)

    def test_all_equal_density_gives_ascending_prefix(self):
        pool = pool_of(5)
        result = select_kd_sort(pool, 3)
        assert result.selected_ids == ("s00", "s01", "s02")

    def test_mixed_gold_and_fallback(self):
        rich = Sample(id="rich", text="a b", gold=ExtractionSet.of(
            [ExtractionTuple.entity("PER", "A"), ExtractionTuple.entity("ORG", "B")]))
        plain = Sample(id="plain", text="nothing capitalized here at all")
        result = select_kd_sort([plain, rich], 1)
        assert result.selected_ids == ("rich",)


class TestActivePrompt:
    def test_ranks_by_disagreement_only(self):
        scores = [
            us("a", u_total=0.9, u_d_norm=0.1),
            us("b", u_total=0.1, u_d_norm=0.9),
        ]
        assert select_active_prompt(scores, 1).selected_ids == ("b",)
        assert rank_and_select(scores, 1).selected_ids == ("a",)

    def test_equivalent_to_weights_one_zero_zero(self):
        scores = [us(f"s{i}", u_total=(i * 7 % 5) / 5, u_d_norm=(i * 3 % 7) / 7)
                  for i in range(7)]
        direct = select_active_prompt(scores, 4).selected_ids
        via_rank = rank_and_select(scores, 4, key=lambda s: s.u_d_norm).selected_ids
        assert direct == via_rank

    def test_identical_u_d_gives_ascending_prefix(self):
        scores = [us(f"s{i}", u_d_norm=0.5) for i in (3, 1, 2)]
        assert select_active_prompt(scores, 2).selected_ids == ("s1", "s2")


class TestRunStrategy:
    def test_zsl_selects_nothing(self):
        cfg = validate_config(RunConfig())
        result = run_strategy("zsl", cfg, 3, pool_of(5))
        assert result.selected_ids == ()
        assert result.n == 0

    def test_score_strategies_require_scores(self):
        cfg = validate_config(RunConfig())
        with pytest.raises(SelectionError, match="scores"):
            run_strategy("apie", cfg, 2, pool_of(5))

    def test_unknown_strategy(self):
        cfg = validate_config(RunConfig())
        with pytest.raises(SelectionError):
            run_strategy("psychic", cfg, 2, pool_of(5), pool_scores=[us("s00")])

    def test_apie_records_weights(self):
        cfg = validate_config(RunConfig())
        scores = [us(f"s{i:02d}", i / 10) for i in range(5)]
        result = run_strategy("apie", cfg, 2, pool_of(5), pool_scores=scores)
        assert result.weights == {"alpha": 0.8, "beta": 0.1, "gamma": 0.1}


class TestResolveLabels:
    def test_gold_lookup(self):
        pool = pool_of(4)
        selection = SelectionResult(strategy="apie", selected_ids=("s02", "s00"),
                                    seed=0, n=2)
        exemplars = resolve_labels(selection, pool, mode="gold_lookup")
        assert [e.input for e in exemplars] == ["sample text 2", "sample text 0"]
        assert all(e.output == GOLD for e in exemplars)

    def test_missing_gold(self):
        pool = pool_of(3, gold=False)
        selection = SelectionResult(strategy="apie", selected_ids=("s01",), seed=0, n=1)
        with pytest.raises(MissingGold):
            resolve_labels(selection, pool, mode="gold_lookup")

    def test_selected_id_not_in_pool(self):
        selection = SelectionResult(strategy="apie", selected_ids=("ghost",), seed=0, n=1)
        with pytest.raises(SelectionError, match="not in pool"):
            resolve_labels(selection, pool_of(2), mode="gold_lookup")

    def test_annotation_store_passthrough(self):
        class FakeStore:
            def __init__(self):
                self.labels = {"s00": GOLD}

            def label_for(self, sid):
                return self.labels.get(sid)

        selection = SelectionResult(strategy="apie", selected_ids=("s00",), seed=0, n=1)
        exemplars = resolve_labels(selection, pool_of(2), mode="annotation_service",
                                   store=FakeStore(), timeout=1.0)
        assert exemplars[0].output == GOLD

    def test_annotation_timeout(self):
        class EmptyStore:
            def label_for(self, sid):
                return None

        selection = SelectionResult(strategy="apie", selected_ids=("s00",), seed=0, n=1)
        with pytest.raises(AnnotationTimeout, match="s00"):
            resolve_labels(selection, pool_of(2), mode="annotation_service",
                           store=EmptyStore(), timeout=0.05, poll_interval=0.01)


class TestManifest:
    def test_round_trip(self):
        result = rank_and_select([us("a", 0.9), us("b", 0.2)], 1, seed=3,
                                 weights={"alpha": 0.8, "beta": 0.1, "gamma": 0.1})
        obj = result.to_obj()
        assert list(obj) == ["strategy", "seed", "n", "selected_ids", "weights"]
        again = SelectionResult.from_obj(obj)
        assert again.selected_ids == result.selected_ids
        assert again.weights == result.weights


def test_exemplar_prompt_order_reverses():
    from apie.prompting import Exemplar

    e1 = Exemplar(input="first", output=GOLD)
    e2 = Exemplar(input="second", output=GOLD)
    selection = SelectionResult(strategy="apie", selected_ids=("a", "b"), seed=0, n=2)
    assert exemplar_prompt_order(selection, [e1, e2]) == [e2, e1]


def test_zsl_manifest_shape():
    obj = select_zsl(seed=9).to_obj()
    assert obj["selected_ids"] == []
    assert obj["n"] == 0
