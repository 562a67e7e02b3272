import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afd_slu.data import (
    IGNORE_INDEX,
    PAD,
    PAD_ID,
    UNK,
    UNK_ID,
    BIOError,
    CorpusError,
    DuplicateIdError,
    LabelError,
    Utterance,
    bio_chunks,
    build_label_maps,
    encode_batch,
    load_corpus,
    load_teacher_embeddings,
    read_corpus,
    validate_bio,
    write_corpus,
    write_teacher_embeddings,
)
from afd_slu.synthetic import ConfigError, SynthConfig, gen_synthetic, indicator, write_synthetic
from afd_slu.tensor import DimensionError


def write_lines(path, records):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records), encoding="utf-8")
    return path


# ---------------------------------------------------------------- strategies

SLOT_TYPES = ["song", "artist", "city"]


@st.composite
def bio_tags(draw, n):
    tags, prev = [], "O"
    for _ in range(n):
        choices = ["O"] + [f"B-{t}" for t in SLOT_TYPES]
        if prev != "O":
            choices.append("I-" + prev[2:])
        tag = draw(st.sampled_from(choices))
        tags.append(tag)
        prev = tag
    return tags


@st.composite
def utterances(draw, uid):
    n = draw(st.integers(1, 6))
    tokens = draw(st.lists(st.sampled_from(["a", "b", "c", "d", "播", "放"]), min_size=n, max_size=n))
    return Utterance(uid, tuple(tokens), tuple(draw(bio_tags(n))), draw(st.sampled_from(["Play", "Ask", "Stop"])))


@st.composite
def corpora(draw, min_size=1, max_size=8):
    k = draw(st.integers(min_size, max_size))
    return [draw(utterances(f"u{i}")) for i in range(k)]


# ---------------------------------------------------------------- corpus loading

def test_minimal_record(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [{"id": "u1", "tokens": ["播", "放"], "slots": ["O", "O"], "intent": "PlayMusic"}])
    utts, maps = load_corpus(path)
    assert len(utts) == 1
    assert maps.n_intents == 1
    assert utts[0].tokens == ("播", "放")


def test_inside_without_begin_is_rejected(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [{"id": "bad7", "tokens": ["x", "y"], "slots": ["I-song", "O"], "intent": "P"}])
    with pytest.raises(BIOError, match="bad7"):
        load_corpus(path)


def test_duplicate_id(tmp_path):
    rec = {"id": "u1", "tokens": ["x"], "slots": ["O"], "intent": "P"}
    path = write_lines(tmp_path / "c.jsonl", [rec, {**rec, "id": "u2"}, rec])
    with pytest.raises(DuplicateIdError, match="u1"):
        load_corpus(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "u1", "tokens": ["x"], "slots": ["O"], "intent": "P"}\n{"id": \n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":2"):
        read_corpus(path)


@pytest.mark.parametrize(
    "rec",
    [
        {"id": "u1", "tokens": ["x"], "slots": ["O"]},
        {"id": "u1", "tokens": ["x"], "slots": ["O"], "intent": "P", "extra": 1},
        {"id": "u1", "tokens": ["x", "y"], "slots": ["O"], "intent": "P"},
        {"id": "u1", "tokens": [], "slots": [], "intent": "P"},
        {"id": 3, "tokens": ["x"], "slots": ["O"], "intent": "P"},
    ],
)
def test_bad_records_are_rejected(tmp_path, rec):
    with pytest.raises(CorpusError):
        read_corpus(write_lines(tmp_path / "c.jsonl", [rec]))


def test_validate_bio_cases():
    validate_bio(["B-a", "I-a", "O", "B-b"])
    validate_bio([])
    with pytest.raises(BIOError):
        validate_bio(["B-a", "I-b"])
    with pytest.raises(BIOError):
        validate_bio(["O", "X-a"])
    with pytest.raises(BIOError):
        validate_bio(["B-"])


def test_bio_chunks():
    assert bio_chunks(["B-song", "I-song", "O", "B-artist"]) == {("song", 0, 1), ("artist", 3, 3)}
    assert bio_chunks(["B-a", "B-a"]) == {("a", 0, 0), ("a", 1, 1)}
    # orphan inside tags from a raw prediction open no chunk
    assert bio_chunks(["O", "I-a", "I-a"]) == set()
    assert bio_chunks(["B-a", "I-b"]) == {("a", 0, 0)}


@given(corpora())
@settings(max_examples=50, deadline=None)
def test_write_load_write_is_byte_identical(tmp_path_factory, utts):
    d = tmp_path_factory.mktemp("rt")
    write_corpus(d / "a.jsonl", utts)
    back = read_corpus(d / "a.jsonl")
    write_corpus(d / "b.jsonl", back)
    assert (d / "a.jsonl").read_bytes() == (d / "b.jsonl").read_bytes()
    assert back == utts


# ---------------------------------------------------------------- label maps and batches

@given(corpora(min_size=2), st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_label_maps_ignore_utterance_order(utts, rnd):
    shuffled = list(utts)
    rnd.shuffle(shuffled)
    assert build_label_maps(utts).to_dict() == build_label_maps(shuffled).to_dict()


def test_label_maps_reserve_pad_and_unk():
    maps = build_label_maps([Utterance("u", ("b", "a"), ("O", "B-x"), "P")])
    assert maps.tokens[PAD_ID] == PAD and maps.tokens[UNK_ID] == UNK
    assert maps.tokens[2:] == ["a", "b"]
    assert maps.slots == ["B-x", "O"]


@given(corpora())
@settings(max_examples=50, deadline=None)
def test_encode_batch_padding_and_recovery(utts):
    maps = build_label_maps(utts)
    b = encode_batch(utts, maps)
    L = max(len(u.tokens) for u in utts)
    assert b.token_ids.shape == b.mask.shape == b.slot_targets.shape == (len(utts), L)
    for i, u in enumerate(utts):
        n = len(u.tokens)
        assert b.mask[i].tolist() == [1.0] * n + [0.0] * (L - n)
        recovered = [maps.tokens[t] for t, m in zip(b.token_ids[i], b.mask[i]) if m]
        assert recovered == list(u.tokens)
        assert (b.slot_targets[i, n:] == IGNORE_INDEX).all()
        assert (b.token_ids[i, n:] == PAD_ID).all()
        assert maps.intents[b.intent_targets[i]] == u.intent
    assert b.ids == [u.id for u in utts]


def test_unknown_tokens_map_to_unk_and_labels_raise():
    maps = build_label_maps([Utterance("u", ("a",), ("B-x",), "P")])
    b = encode_batch([Utterance("v", ("zzz", "a"), ("O", "B-x"), "P")], maps, strict=False)
    assert b.token_ids[0].tolist() == [UNK_ID, maps.token_index["a"]]
    # "O" never appeared in training, so it is ignored rather than guessed
    assert b.slot_targets[0, 0] == IGNORE_INDEX
    with pytest.raises(LabelError, match="'v'"):
        encode_batch([Utterance("v", ("a",), ("O",), "P")], maps)
    with pytest.raises(LabelError):
        encode_batch([Utterance("w", ("a",), ("B-x",), "Q")], maps)


def test_encode_batch_pad_to_and_empty():
    maps = build_label_maps([Utterance("u", ("a",), ("O",), "P")])
    b = encode_batch([Utterance("u", ("a",), ("O",), "P")], maps, pad_to=4)
    assert b.token_ids.shape == (1, 4)
    with pytest.raises(DimensionError):
        encode_batch([Utterance("u", ("a", "a"), ("O", "O"), "P")], maps, pad_to=1)
    with pytest.raises(ValueError):
        encode_batch([], maps)


# ---------------------------------------------------------------- teacher embedding files

def test_teacher_embedding_file_examples(tmp_path):
    ok = write_lines(tmp_path / "t.jsonl", [{"id": "u1", "embedding": [0.0, 0.0]}])
    assert load_teacher_embeddings(ok, 2)["u1"].tolist() == [0.0, 0.0]
    bad = write_lines(tmp_path / "b.jsonl", [{"id": "u9", "embedding": [0.0, 1.0, 2.0]}])
    with pytest.raises(DimensionError, match="u9"):
        load_teacher_embeddings(bad, 2)
    two = write_lines(tmp_path / "two.jsonl", [{"id": "a", "embedding": [1, 2]}, {"id": "b", "embedding": [3, 4]}])
    assert len(load_teacher_embeddings(two, 2)) == 2


def test_teacher_embedding_file_rejects_bad_records(tmp_path):
    for rec in ({"id": "a"}, {"id": "a", "embedding": ["x", 1]}, {"id": "a", "embedding": [1, 2], "more": 0}):
        with pytest.raises(CorpusError):
            load_teacher_embeddings(write_lines(tmp_path / "t.jsonl", [rec]), 2)
    dup = write_lines(tmp_path / "d.jsonl", [{"id": "a", "embedding": [1, 2]}] * 2)
    with pytest.raises(DuplicateIdError):
        load_teacher_embeddings(dup, 2)


def test_teacher_embedding_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    table = {f"u{i}": rng.normal(size=5) for i in range(4)}
    write_teacher_embeddings(tmp_path / "t.jsonl", table)
    back = load_teacher_embeddings(tmp_path / "t.jsonl", 5)
    assert list(back) == list(table)
    for k in table:
        assert back[k].tobytes() == table[k].tobytes()


# ---------------------------------------------------------------- synthetic corpus

def small_cfg(**kw):
    return SynthConfig(**{"n_train": 60, "n_dev": 10, "n_test": 10, **kw})


def test_synthetic_is_deterministic(tmp_path):
    a = write_synthetic(tmp_path / "a", gen_synthetic(7, small_cfg()))
    b = write_synthetic(tmp_path / "b", gen_synthetic(7, small_cfg()))
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()
    c = write_synthetic(tmp_path / "c", gen_synthetic(8, small_cfg()))
    assert a["train"].read_bytes() != c["train"].read_bytes()


def test_synthetic_files_load_back(tmp_path):
    corpus = gen_synthetic(1, small_cfg())
    paths = write_synthetic(tmp_path, corpus)
    utts, maps = load_corpus(paths["train"])
    assert len(utts) == 60
    table = load_teacher_embeddings(paths["teacher"], corpus.config.d_et)
    assert set(table) == {u.id for u in corpus.train + corpus.dev + corpus.test}


def test_synthetic_split_sizes_and_ids_are_unique():
    corpus = gen_synthetic(2, small_cfg())
    assert (len(corpus.train), len(corpus.dev), len(corpus.test)) == (60, 10, 10)
    ids = [u.id for u in corpus.train + corpus.dev + corpus.test]
    assert len(set(ids)) == len(ids)


def test_single_intent_corpus():
    corpus = gen_synthetic(3, small_cfg(n_intents=1))
    assert {u.intent for u in corpus.train + corpus.dev + corpus.test} == {"intent_0"}


def test_synthetic_slot_spans_never_touch():
    # a separator sits between consecutive slots, so every B- follows O
    corpus = gen_synthetic(4, small_cfg())
    for u in corpus.train:
        for prev, tag in zip(u.slot_tags, u.slot_tags[1:]):
            if tag.startswith("B-"):
                assert prev == "O"


def test_teacher_vectors_within_noise_of_shared_labels():
    cfg = small_cfg(n_train=300)
    corpus = gen_synthetic(5, cfg)
    groups = {}
    for u in corpus.train:
        types = tuple(sorted(t[2:] for t in u.slot_tags if t.startswith("B-")))
        groups.setdefault((u.intent, types), []).append(corpus.teacher[u.id])
    bound = 6 * cfg.noise_sigma * np.sqrt(cfg.d_et)
    checked = 0
    for vecs in groups.values():
        for v in vecs[1:]:
            assert np.linalg.norm(v - vecs[0]) <= bound
            checked += 1
    assert checked > 50


def test_teacher_vectors_follow_the_projection():
    cfg = small_cfg(noise_sigma=0.0)
    corpus = gen_synthetic(6, cfg)
    intents = sorted({u.intent for u in corpus.train})
    for u in corpus.train[:20]:
        types = [int(t.split("_")[1]) for t in u.slot_tags if t.startswith("B-")]
        ind = indicator(int(u.intent.split("_")[1]), types, cfg.n_intents, cfg.n_slot_types)
        np.testing.assert_allclose(corpus.teacher[u.id], ind @ corpus.projection, atol=1e-12)
    assert len(intents) > 1


def test_too_many_slot_types_for_vocab():
    with pytest.raises(ConfigError):
        gen_synthetic(0, small_cfg(vocab=20, n_slot_types=30))
    with pytest.raises(ConfigError):
        gen_synthetic(0, small_cfg(n_train=0))
