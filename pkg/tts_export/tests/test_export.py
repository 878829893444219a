"""Exporter contract tests against a locally saved random checkpoint."""

import itertools

import pytest
import torch

from xmodal_kws.embeddings import (
    EmbeddingLayerTag,
    load_embedding_store,
    read_embedding,
    read_manifest,
)
from tts_export import cli
from tts_export.capture import LAYER_TABLE, extract_keyword
from tts_export.model import SYMBOLS, Tacotron2Like, text_to_ids

MAX_STEPS = 24


def fifty_keywords():
    """50 deterministic keywords: varied lengths, some multi-word."""
    syllables = ["ba", "ke", "li", "mo", "nu", "pa", "re", "si", "to", "vu"]
    words = ["a", "on", "hello"]
    words += ["%s %s" % (a, b) for a, b in zip(syllables, reversed(syllables))]
    for a, b in itertools.product(syllables, repeat=2):
        words.append(a + b)
    seen = []
    for w in words:
        if w not in seen:
            seen.append(w)
    assert len(seen) >= 50
    return seen[:50]


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    model = Tacotron2Like(max_decoder_steps=MAX_STEPS)
    path = tmp_path_factory.mktemp("ckpt") / "tts_random.pt"
    torch.save(model.state_dict(), path)
    return path


@pytest.fixture(scope="session")
def export_dir(checkpoint, tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    kw_file = out / "keywords.txt"
    kw_file.write_text("\n".join(fifty_keywords()) + "\n")
    rc = cli.main(["export", "--checkpoint", str(checkpoint),
                   "--keywords", str(kw_file),
                   "--tags", "E1,E2,E3,E4,E5,E6,E7",
                   "--out", str(out / "embs"),
                   "--seed", "3", "--max-steps", str(MAX_STEPS)])
    assert rc == 0
    return out / "embs"


def test_fifty_keyword_export_passes_primary_reader(export_dir):
    entries = read_manifest(export_dir / "embeddings.tsv")
    assert len(entries) == 50 * 7
    frame_rows = {}
    for keyword, tag, rel in entries:
        seq = read_embedding(export_dir / rel)
        assert seq.keyword == keyword
        assert seq.tag is tag
        assert seq.values.shape[1] == tag.width
        if tag.char_aligned:
            assert seq.values.shape[0] == len(keyword)
        else:
            frame_rows.setdefault(keyword, set()).add(seq.values.shape[0])
    # every frame-aligned tag of a keyword shares the same frame count
    for keyword, counts in frame_rows.items():
        assert len(counts) == 1
        assert counts.pop() >= 1


def test_char_aligned_rows_and_mel_width(export_dir):
    for keyword in ("hello", "a", "ba vu"):
        e3 = read_embedding(export_dir / ("E3_%s.ttse" % keyword.replace(" ", "-")))
        assert e3.values.shape == (len(keyword), 512)
        e7 = read_embedding(export_dir / ("E7_%s.ttse" % keyword.replace(" ", "-")))
        assert e7.values.shape[1] == 80


def test_store_loads_for_matching_network_width(export_dir):
    store = load_embedding_store(export_dir / "embeddings.tsv",
                                 EmbeddingLayerTag.E1)
    assert set(store) == set(fifty_keywords())
    assert store["hello"].values.shape == (5, 512)


def test_rerun_is_byte_identical(checkpoint, tmp_path):
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("hello\nonto\n")
    args = ["export", "--checkpoint", str(checkpoint), "--keywords",
            str(kw_file), "--tags", "E3,E7", "--seed", "11",
            "--max-steps", str(MAX_STEPS)]
    assert cli.main(args + ["--out", str(tmp_path / "one")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "two")]) == 0
    for rel in ("E3_hello.ttse", "E7_onto.ttse", "embeddings.tsv"):
        a = (tmp_path / "one" / rel).read_bytes()
        b = (tmp_path / "two" / rel).read_bytes()
        assert a == b


def test_keyword_order_does_not_change_files(checkpoint, tmp_path):
    (tmp_path / "fwd.txt").write_text("hello\nonto\n")
    (tmp_path / "rev.txt").write_text("onto\nhello\n")
    base = ["export", "--checkpoint", str(checkpoint), "--tags", "E7",
            "--seed", "11", "--max-steps", str(MAX_STEPS)]
    assert cli.main(base + ["--keywords", str(tmp_path / "fwd.txt"),
                            "--out", str(tmp_path / "one")]) == 0
    assert cli.main(base + ["--keywords", str(tmp_path / "rev.txt"),
                            "--out", str(tmp_path / "two")]) == 0
    assert ((tmp_path / "one" / "E7_hello.ttse").read_bytes()
            == (tmp_path / "two" / "E7_hello.ttse").read_bytes())


def test_empty_keyword_list_exits_1_without_files(checkpoint, tmp_path):
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("\n")
    out = tmp_path / "embs"
    rc = cli.main(["export", "--checkpoint", str(checkpoint),
                   "--keywords", str(kw_file), "--out", str(out)])
    assert rc == 1
    assert not out.exists() or not any(out.iterdir())


def test_unknown_tag_exits_1(checkpoint, tmp_path):
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("hello\n")
    rc = cli.main(["export", "--checkpoint", str(checkpoint),
                   "--keywords", str(kw_file), "--tags", "E9",
                   "--out", str(tmp_path / "embs")])
    assert rc == 1


def test_unsupported_character_exits_1(checkpoint, tmp_path):
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("café\n")
    rc = cli.main(["export", "--checkpoint", str(checkpoint),
                   "--keywords", str(kw_file), "--tags", "E1",
                   "--out", str(tmp_path / "embs")])
    assert rc == 1


def test_missing_checkpoint_exits_2(tmp_path):
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("hello\n")
    rc = cli.main(["export", "--checkpoint", str(tmp_path / "nope.pt"),
                   "--keywords", str(kw_file), "--out", str(tmp_path / "e")])
    assert rc == 2


def test_corrupt_checkpoint_exits_2(tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("hello\n")
    rc = cli.main(["export", "--checkpoint", str(bad),
                   "--keywords", str(kw_file), "--out", str(tmp_path / "e")])
    assert rc == 2


def test_wrong_architecture_checkpoint_exits_2(tmp_path):
    bad = tmp_path / "half.pt"
    torch.save({"embedding.weight": torch.zeros(3, 3)}, bad)
    kw_file = tmp_path / "kw.txt"
    kw_file.write_text("hello\n")
    rc = cli.main(["export", "--checkpoint", str(bad),
                   "--keywords", str(kw_file), "--out", str(tmp_path / "e")])
    assert rc == 2


def test_list_layers_prints_seven_rows(capsys):
    assert cli.main(["list-layers"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 8  # header + 7 rows
    assert out[1].split() == ["E1", "T_a", "x", "512",
                              "CharEmbedding", "block", "output"]
    assert "Target Melspectrogram" in out[7]
    assert [row[0] for row in LAYER_TABLE] == [
        "E1", "E2", "E3", "E4", "E5", "E6", "E7"]


def test_usage_errors_exit_1():
    assert cli.main([]) == 1
    assert cli.main(["export"]) == 1
    assert cli.main(["frobnicate"]) == 1


def test_extract_shapes_direct(checkpoint):
    model = Tacotron2Like(max_decoder_steps=MAX_STEPS)
    model.load_state_dict(torch.load(checkpoint, weights_only=True))
    arrays = extract_keyword(model, "on a", rng_seed=5)
    assert arrays["E1"].shape == (4, 512)
    assert arrays["E2"].shape == (4, 512)
    assert arrays["E3"].shape == (4, 512)
    t_b = arrays["E7"].shape[0]
    assert t_b >= 1
    assert arrays["E4"].shape == (t_b, 512)
    assert arrays["E5"].shape == (t_b, 512)
    assert arrays["E6"].shape == (t_b, 512)
    assert arrays["E7"].shape == (t_b, 80)


def test_text_to_ids_round_trip():
    ids = text_to_ids("on a")
    assert [SYMBOLS[i] for i in ids.tolist()] == ["o", "n", " ", "a"]
    with pytest.raises(ValueError):
        text_to_ids("")
    with pytest.raises(ValueError):
        text_to_ids("Hi!")
