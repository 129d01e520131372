import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from mmgcn.data import (
    Corpus,
    CorpusError,
    Dialogue,
    SynthSpec,
    Utterance,
    load_corpus,
    save_corpus,
    split_corpus,
    synthesize_corpus,
)


def write_lines(path, meta, records):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": meta}) + "\n")
        for r in records:
            fh.write(json.dumps(r) + "\n")


META = {"classes": ["neg", "pos"], "dims": {"a": 4, "v": 3, "t": 5}, "max_speakers": 2}


def utt(speaker=0, label="neg", a=4, v=3, t=5):
    return {"speaker": speaker, "label": label, "a": [0.5] * a, "v": [1.0] * v, "t": [-2.0] * t}


def test_load_small_file(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, META, [{"id": "d1", "utterances": [utt(0, "neg"), utt(1, "pos")]}])
    c = load_corpus(p)
    assert len(c.dialogues) == 1 and c.num_utterances == 2
    assert c.dims == {"a": 4, "v": 3, "t": 5}
    assert c.labels().tolist() == [0, 1]
    assert c.dialogues[0].features("t").shape == (2, 5)


def test_missing_field_names_field_and_line(tmp_path):
    p = tmp_path / "c.jsonl"
    bad = utt()
    del bad["v"]
    write_lines(p, META, [{"id": "d1", "utterances": [utt()]}, {"id": "d2", "utterances": [utt(), bad]}])
    with pytest.raises(CorpusError) as err:
        load_corpus(p)
    msg = str(err.value)
    assert ":3:" in msg and "'v'" in msg


@pytest.mark.parametrize(
    "record,fragment",
    [
        ({"id": "d", "utterances": [utt(label="joy")]}, "unknown label"),
        ({"id": "d", "utterances": [utt(a=3)]}, "field 'a' has dim 3"),
        ({"id": "d", "utterances": [utt(speaker=2)]}, "exceeds max_speakers"),
        ({"id": "d", "utterances": [utt(speaker=1)]}, "contiguous"),
        ({"id": "d", "utterances": []}, "no utterances"),
    ],
)
def test_invalid_records(tmp_path, record, fragment):
    p = tmp_path / "c.jsonl"
    write_lines(p, META, [record])
    with pytest.raises(CorpusError, match=fragment):
        load_corpus(p)


def test_non_finite_and_bad_json(tmp_path):
    p = tmp_path / "c.jsonl"
    rec = {"id": "d", "utterances": [utt()]}
    write_lines(p, META, [rec])
    p.write_text(p.read_text().replace("0.5", "NaN", 1))
    with pytest.raises(CorpusError, match="non-finite"):
        load_corpus(p)
    p.write_text(json.dumps({"meta": META}) + "\n{broken\n")
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(p)


def test_expected_dims_mismatch(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, META, [{"id": "d", "utterances": [utt()]}])
    with pytest.raises(CorpusError, match="dim mismatch"):
        load_corpus(p, expected_dims={"a": 4, "v": 3, "t": 6})


def test_iemocap_shaped_corpus_loads(tmp_path):
    rng = np.random.default_rng(0)
    lengths = np.full(151, 7433 // 151)
    lengths[: 7433 - lengths.sum()] += 1
    classes = ["happy", "sad", "neutral", "angry", "excited", "frustrated"]
    dialogues = []
    for i, n in enumerate(lengths):
        spk = np.arange(n) % 2
        utts = tuple(
            Utterance(tuple(rng.standard_normal(2)), (0.0,), (1.0, 2.0), int(s), int(rng.integers(6))) for s in spk
        )
        dialogues.append(Dialogue(f"d{i}", utts))
    corpus = Corpus(tuple(dialogues), tuple(classes), {"a": 2, "v": 1, "t": 2}, 2)
    p = tmp_path / "iemocap.jsonl"
    save_corpus(corpus, p)
    loaded = load_corpus(p)
    assert len(loaded.dialogues) == 151 and loaded.num_utterances == 7433 and loaded.num_classes == 6
    train, test = split_corpus(loaded, 0.8, seed=0)
    assert (len(train.dialogues), len(test.dialogues)) == (120, 31)


def test_round_trip_is_exact(tmp_path):
    corpus = synthesize_corpus(SynthSpec(num_dialogues=5, len_range=(2, 6), seed=3))
    p = tmp_path / "c.jsonl"
    save_corpus(corpus, p)
    back = load_corpus(p)
    assert back == corpus
    for d0, d1 in zip(corpus.dialogues, back.dialogues):
        for m in "avt":
            assert np.array_equal(d0.features(m), d1.features(m))


def test_synthesis_is_deterministic(tmp_path):
    spec = SynthSpec(num_dialogues=6, seed=7)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(synthesize_corpus(spec), a)
    save_corpus(synthesize_corpus(spec), b)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.jsonl"
    save_corpus(synthesize_corpus(SynthSpec(num_dialogues=6, seed=8)), c)
    assert a.read_bytes() != c.read_bytes()


def test_synthesis_shape_and_speakers():
    corpus = synthesize_corpus(SynthSpec(num_dialogues=20, seed=1))
    assert corpus.num_classes == 6 and corpus.max_speakers == 2
    assert corpus.class_names[0] == "happy"
    for d in corpus.dialogues:
        assert 5 <= len(d) <= 50
        assert d.speakers[0] == 0
        assert set(d.speakers.tolist()) <= {0, 1}


@pytest.mark.parametrize(
    "kwargs", [{"num_dialogues": 0}, {"len_range": (5, 2)}, {"num_classes": 1}, {"persistence": 1.5},
               {"informativeness": {"a": 0.6, "v": -1.0, "t": 0.9}}]
)
def test_synth_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        synthesize_corpus(SynthSpec(**kwargs))


def test_trimodal_probe_beats_single_modalities():
    corpus = synthesize_corpus(SynthSpec(num_dialogues=60, len_range=(10, 20), seed=21))
    train, test = split_corpus(corpus, 0.7, seed=0)

    def stack(c, mods):
        return np.vstack([np.hstack([d.features(m) for m in mods]) for d in c.dialogues])

    scores = {}
    for mods in ("a", "v", "t", "avt"):
        clf = LogisticRegression(max_iter=2000).fit(stack(train, mods), train.labels())
        scores[mods] = clf.score(stack(test, mods), test.labels())
    assert scores["avt"] > scores["t"] > scores["a"] > scores["v"]
    assert scores["avt"] - scores["t"] > 0.03


def test_split_examples():
    corpus = synthesize_corpus(SynthSpec(num_dialogues=10, len_range=(2, 3), seed=0))
    tr, te = split_corpus(corpus, 0.8, seed=4)
    assert (len(tr.dialogues), len(te.dialogues)) == (8, 2)
    assert (tr.split, te.split) == ("train", "test")
    tr2, te2 = split_corpus(corpus, 0.8, seed=4)
    assert [d.id for d in tr.dialogues] == [d.id for d in tr2.dialogues]
    with pytest.raises(ValueError):
        split_corpus(corpus, 0.01, seed=0)
    with pytest.raises(ValueError):
        split_corpus(corpus, 1.0, seed=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_is_disjoint_and_exhaustive(n, ratio, seed):
    corpus = synthesize_corpus(SynthSpec(num_dialogues=n, len_range=(1, 2), dims={"a": 1, "v": 1, "t": 1}, seed=1))
    try:
        tr, te = split_corpus(corpus, ratio, seed)
    except ValueError:
        assert int(ratio * n + 1e-9) in (0, n)
        return
    ids_tr = {d.id for d in tr.dialogues}
    ids_te = {d.id for d in te.dialogues}
    assert not ids_tr & ids_te
    assert ids_tr | ids_te == {d.id for d in corpus.dialogues}
