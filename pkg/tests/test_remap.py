"""Templates, tag remapping semantics, fallback chain, and determinism."""

from __future__ import annotations

import numpy as np
import pytest

from advmatch.corpus import Record, Token, parse_token_stream as pts
from advmatch.remap import (CandidateTable, RemapError, fill_slots, remap_tags,
                            templatize)
from advmatch.scoring import content
from advmatch.seeding import derive_rng

from conftest import simple_bucket_corpus


def target(objects, query="why is [person:1] here ?", gold="[person:1] rests ."):
    return Record(id="t", source_key="m", query=pts(query), gold=pts(gold),
                  objects=tuple(objects))


class TestTemplatize:
    def test_no_tags_zero_slots(self):
        t = templatize(pts("nothing tagged here ."))
        assert t.slots == ()
        assert t.tokens == pts("nothing tagged here .")

    def test_one_slot(self):
        t = templatize(pts("[person:2] is smiling ."))
        assert len(t.slots) == 1
        assert t.slot_classes == ("person",)
        assert sum(1 for tok in t.tokens if tok.kind == "word") == 3

    def test_round_trip_fill(self):
        response = pts("[person:2] hands [cup:3] over .")
        t = templatize(response)
        original_tags = [(tok.tag_class, tok.tag_index)
                         for tok in response if tok.is_tag]
        assert fill_slots(t, original_tags) == response

    def test_fill_arity_checked(self):
        with pytest.raises(RemapError, match="slots"):
            fill_slots(templatize(pts("[person:1] waves .")), [])


class TestRemapTags:
    def test_zero_slots_rng_unconsumed(self):
        rng = derive_rng(0, "x")
        before = rng.bit_generator.state
        out = remap_tags(templatize(pts("no tags at all .")),
                         target(["person"]), 0.5, rng)
        assert out == pts("no tags at all .")
        assert rng.bit_generator.state == before

    def test_singleton_pools_ignore_p_reuse(self):
        # one person object, mentioned in the query: both pools = {1}
        tgt = target(["person"])
        # the template's own index is foreign anyway; only its class matters
        template = templatize((Token.tag("person", 1), *pts("smiles .")))
        for p_reuse in (0.0, 0.37, 1.0):
            out = remap_tags(template, tgt, p_reuse, derive_rng(1, p_reuse))
            assert out[0] == Token.tag("person", 1)

    def test_reuse_only_draws_mentioned(self):
        # mentioned persons = {1}; objects add persons 2 and 3
        tgt = target(["person", "person", "person"])
        template = templatize((Token.tag("person", 2), *pts("waves .")))
        rng = derive_rng(2, "mc")
        seen = set()
        for _ in range(10_000):
            out = remap_tags(template, tgt, 1.0, rng)
            seen.add(out[0].tag_index)
        assert seen == {1}

    def test_no_reuse_draws_uniformly_from_objects(self):
        tgt = target(["person", "person", "person"])
        template = templatize((Token.tag("person", 2), *pts("waves .")))
        rng = derive_rng(3, "mc")
        counts = {1: 0, 2: 0, 3: 0}
        trials = 30_000
        for _ in range(trials):
            out = remap_tags(template, tgt, 0.0, rng)
            counts[out[0].tag_index] += 1
        for idx in counts:
            assert counts[idx] / trials == pytest.approx(1 / 3, abs=0.02)

    def test_fallback_to_person(self):
        # no cars anywhere, but persons exist
        tgt = target(["person", "person"])
        template = templatize((Token.tag("car", 1), *pts("drives away .")))
        out = remap_tags(template, tgt, 0.5, derive_rng(4, "fb"))
        assert out[0].kind == "tag"
        assert out[0].tag_class == "person"

    def test_fallback_to_class_words(self):
        # no cars, no persons: tag dissolves into "the car"
        tgt = target(["dog"], query="why bark ?", gold="loud noise .")
        template = templatize((Token.tag("car", 1), *pts("drives away .")))
        out = remap_tags(template, tgt, 0.5, derive_rng(5, "fb"))
        assert out[:2] == (Token.word("the"), Token.word("car"))
        assert len(out) == len(template.tokens) + 1

    def test_empty_objects_total_fallback(self):
        tgt = Record(id="t", source_key="m", query=pts("why quiet ?"),
                     gold=pts("no reason ."), objects=())
        template = templatize((Token.tag("person", 1), *pts("waves .")))
        out = remap_tags(template, tgt, 0.5, derive_rng(6, "fb"))
        assert out[:2] == (Token.word("the"), Token.word("person"))

    def test_output_tags_exist_in_target(self):
        rng_master = np.random.default_rng(7)
        classes = ["person", "car", "dog", "cup"]
        for trial in range(200):
            objs = [classes[int(rng_master.integers(4))]
                    for _ in range(int(rng_master.integers(0, 5)))]
            mention = f"[{objs[0]}:1]" if objs else ""
            tgt = Record(id="t", source_key="m",
                         query=pts(f"why is {mention} here ?"),
                         gold=pts("something happens ."), objects=tuple(objs))
            template = templatize(tuple(
                Token.tag(classes[int(rng_master.integers(4))], 1)
                for _ in range(int(rng_master.integers(1, 4)))))
            out = remap_tags(template, tgt, float(rng_master.random()),
                             derive_rng(8, trial))
            for tok in out:
                if tok.kind == "tag":
                    assert 1 <= tok.tag_index <= len(objs)
                    assert objs[tok.tag_index - 1] == tok.tag_class

    def test_p_reuse_validated(self):
        with pytest.raises(RemapError, match="p_reuse"):
            remap_tags(templatize(pts("x .")), target(["person"]), 1.5,
                       derive_rng(0))


class TestCandidateTable:
    def test_same_key_same_output(self):
        bucket = simple_bucket_corpus(6, seed=1)
        a = CandidateTable(bucket, p_reuse=0.5, seed=42)
        b = CandidateTable(bucket, p_reuse=0.5, seed=42)
        for i in range(6):
            for j in range(6):
                assert a.get(i, j) == b.get(i, j)

    def test_self_pair_untouched(self):
        bucket = simple_bucket_corpus(4, seed=2)
        table = CandidateTable(bucket, p_reuse=0.5, seed=0)
        for i in range(4):
            assert table.get(i, i) == bucket[i].gold

    def test_matches_remap_tags_substream(self):
        bucket = simple_bucket_corpus(5, seed=3)
        table = CandidateTable(bucket, p_reuse=0.3, seed=7)
        for i in range(5):
            for j in range(5):
                if i == j:
                    continue
                rng = derive_rng(7, "remap", bucket[i].id, bucket[j].id)
                expected = remap_tags(templatize(bucket[j].gold), bucket[i],
                                      0.3, rng)
                assert table.get(i, j) == expected

    def test_content_matches_materialized_tokens(self):
        # content(i, j) must be RNG-free yet equal content(get(i, j)),
        # including fallback translations
        rng = np.random.default_rng(9)
        classes = ["person", "car", "dog", "own"]  # "own" is a stopword
        records = []
        for i in range(12):
            objs = tuple(classes[int(rng.integers(4))]
                         for _ in range(int(rng.integers(1, 4))))
            tagged = f"[{objs[0]}:1]"
            records.append(Record(
                id=f"r{i:02d}", source_key="m",
                query=pts(f"why is {tagged} busy b{i} ?"),
                gold=(Token.tag(objs[-1], len(objs)), *pts(f"acts a{i} .")),
                objects=objs))
        table = CandidateTable(records, p_reuse=0.4, seed=13)
        for i in range(12):
            for j in range(12):
                assert table.content(i, j) == content(table.get(i, j))

    def test_translated_pairs_cover_content_changes(self):
        rng = np.random.default_rng(10)
        records = []
        for i in range(10):
            objs = ("person",) if i % 2 else ("dog",)
            records.append(Record(
                id=f"r{i:02d}", source_key="m",
                query=pts(f"why is [{objs[0]}:1] loud l{i} ?"),
                gold=(Token.tag(objs[0], 1), *pts(f"moves m{i} .")),
                objects=objs))
        table = CandidateTable(records, p_reuse=0.5, seed=1)
        flagged = set(table.translated_pairs())
        base = table.base_contents()
        for i in range(10):
            for j in range(10):
                if i == j:
                    continue
                differs = table.content(i, j) != base[j]
                assert ((i, j) in flagged) == differs
