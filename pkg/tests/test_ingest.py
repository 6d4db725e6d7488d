import datetime as dt
import math
import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from msprop import ingest
from msprop.ingest import (
    ALPHABET, Annotation, CoordinateRecord, FeatureTable, ParseError, SequenceRecord,
    build_homology_network, dump_feature_table, hashed_kmer_features, load_feature_table,
    parse_annotations, parse_coords, parse_fasta, parse_ppi_tsv, parse_similarity_tsv,
    temporal_split, write_annotations, write_coords, write_edges, write_fasta,
)
from msprop.numeric import ConfigError

D = dt.date


def test_fasta_examples():
    assert parse_fasta(">p1\nACDE") == [SequenceRecord("p1", "ACDE")]
    assert parse_fasta(">p1 some description\nAC\nde\nFG\n")[0].sequence == "ACDEFG"
    with pytest.raises(ParseError, match="empty sequence for p1"):
        parse_fasta(">p1\n>p2\nAA")
    with pytest.raises(ParseError, match="line 1"):
        parse_fasta("ACDE\n>p1\nAA")
    with pytest.raises(ParseError, match="line 2"):
        parse_fasta(">p1\nAC1E")


@given(st.lists(st.tuples(st.text("abcxyz0123_", min_size=1, max_size=8),
                          st.text(ALPHABET, min_size=1, max_size=150)),
                min_size=1, max_size=5, unique_by=lambda r: r[0]))
def test_fasta_round_trip(recs):
    records = [SequenceRecord(i, s) for i, s in recs]
    assert parse_fasta(write_fasta(records)) == records


def test_coords_simple_format():
    rec = parse_coords("1 A 0 0 0\n2 C 0 0 5", "p")
    assert len(rec) == 2 and rec.letters == "AC"
    assert np.linalg.norm(rec.xyz[1] - rec.xyz[0]) == 5.0
    with pytest.raises(ParseError, match="line 2"):
        parse_coords("1 A 0 0 0\n1 C 0 0 5")
    with pytest.raises(ParseError, match="line 1"):
        parse_coords("1 A 0 zero 0")


PDB = (
    "HEADER    TEST\n"
    "ATOM      1  N   MET A   1      11.104   6.134  -6.504  1.00  0.00           N\n"
    "ATOM      2  CA  MET A   1      11.639   6.071  -5.147  1.00  0.00           C\n"
    "ATOM      3  CA  GLY A   2      12.000   9.000  -4.000  1.00  0.00           C\n"
    "ATOM      4  CA BGLY A   2      99.000  99.000  99.000  1.00  0.00           C\n"
    "ATOM      5  CA  LYS B   1       0.000   0.000   0.000  1.00  0.00           C\n"
    "ENDMDL\n"
    "ATOM      6  CA  ALA A   3       1.000   1.000   1.000  1.00  0.00           C\n"
)


def test_coords_pdb_ca_records():
    rec = parse_coords(PDB, "p")
    assert rec.letters == "MG"
    assert list(rec.indices) == [1, 2]
    assert np.allclose(rec.xyz[0], [11.639, 6.071, -5.147])


def test_coords_round_trip():
    g = np.random.default_rng(0)
    rec = CoordinateRecord("p", [1, 3, 7], "ACW", g.normal(size=(3, 3)) * 10)
    back = parse_coords(write_coords(rec), "p")
    assert np.array_equal(back.xyz, rec.xyz) and back.letters == rec.letters
    assert np.array_equal(back.indices, rec.indices)


def test_ppi_examples():
    e = parse_ppi_tsv("p1 p2 700")
    assert dict(e.items()) == {("p1", "p2"): 700.0}
    e = parse_ppi_tsv("p1 p2 700\np2 p1 900")
    assert dict(e.items()) == {("p1", "p2"): 900.0}
    with pytest.warns(UserWarning, match="self-edge"):
        assert len(parse_ppi_tsv("p1 p1 500")) == 0
    assert len(parse_ppi_tsv("protein1\tprotein2\tscore\np1\tp2\t10")) == 1
    with pytest.raises(ParseError, match="line 2"):
        parse_ppi_tsv("p1 p2 700\np1 p3")
    with pytest.raises(ParseError, match="outside"):
        parse_ppi_tsv("p1 p2 1001")
    assert len(parse_ppi_tsv("p1 p2 100\np1 p3 800", min_score=400)) == 1


@given(st.dictionaries(st.tuples(st.sampled_from("abcdef"), st.sampled_from("abcdef")),
                       st.integers(0, 1000), max_size=12))
def test_edge_round_trip_and_symmetry(raw):
    edges = ingest.PpiEdgeList()
    for (a, b), w in raw.items():
        if a != b:
            edges.add(a, b, w)
    back = parse_ppi_tsv(write_edges(edges, "protein1\tprotein2\tscore"))
    assert dict(back.items()) == dict(edges.items())
    assert all(a < b for a, b in back.weights)


def test_similarity_range():
    assert len(parse_similarity_tsv("a b 0.5")) == 1
    with pytest.raises(ParseError):
        parse_similarity_tsv("a b 1.5")


def test_annotation_examples():
    anns = parse_annotations("p1\tGO:0003674\t2020-05-01")
    assert anns == [Annotation("p1", "GO:0003674", D(2020, 5, 1), "")]
    with pytest.raises(ParseError, match="date"):
        parse_annotations("p1\tGO:0003674\t2021-13-01")
    with pytest.raises(ParseError, match="GO id"):
        parse_annotations("p1\tGO:12\t2021-01-01")
    dup = "p1\tGO:0003674\t2020-05-01\tIDA\np1\tGO:0003674\t2020-05-01\tIDA\n"
    assert len(parse_annotations(dup)) == 1
    two = parse_annotations(dup + "p2\tGO:0005575\t2019-01-01\n")
    assert parse_annotations(write_annotations(two)) == two


def test_temporal_split_boundaries():
    t1, t2, t3 = D(2021, 1, 1), D(2022, 8, 1), D(2023, 8, 31)
    anns = [Annotation("old", "GO:0000001", D(2019, 3, 1)),
            Annotation("old", "GO:0000002", D(2022, 1, 1)),
            Annotation("edge", "GO:0000001", t1),
            Annotation("t2", "GO:0000001", t2),
            Annotation("t3", "GO:0000001", t3),
            Annotation("late", "GO:0000001", D(2024, 1, 1))]
    s = temporal_split(anns, t1, t2, t3)
    assert s.train == ["old"] and s.valid == ["edge"]
    assert s.test == ["t2", "t3"]
    assert "late" not in s.role() and "nobody" not in s.role()
    with pytest.raises(ConfigError):
        temporal_split(anns, t2, t1, t3)


def test_feature_table_text_and_binary():
    text = "protein-id 4\na 1 2 3 4\nb 5 6 7 8\n"
    t = load_feature_table(text)
    assert t.dim == 4 and t.ids == ["a", "b"]
    with pytest.raises(ParseError, match="line 3"):
        load_feature_table("protein-id 4\na 1 2 3 4\nb 5 6 7\n")
    with pytest.raises(ParseError):
        load_feature_table("protein-id 0\n")
    back = load_feature_table(dump_feature_table(t))
    assert back.ids == t.ids and np.array_equal(back.values, t.values)
    back = load_feature_table(dump_feature_table(t, binary=False))
    assert np.array_equal(back.values, t.values)


def test_hse1_layout():
    t = FeatureTable(["x"], np.array([[1.5, -2.0]]))
    raw = dump_feature_table(t)
    assert raw[:4] == b"HSE1"
    assert struct.unpack("<II", raw[4:12]) == (1, 2)
    with pytest.raises(ParseError):
        load_feature_table(raw[:-3])


def test_paper_feature_width_accepted():
    g = np.random.default_rng(0)
    t = FeatureTable(["a", "b"], g.normal(size=(2, 1280)))
    assert load_feature_table(dump_feature_table(t)).dim == 1280


def test_homology_network_examples():
    seqs = [SequenceRecord("a", "ACDEFG"), SequenceRecord("b", "ACDEFG"),
            SequenceRecord("c", "AAAA"), SequenceRecord("d", "CCCC")]
    e = build_homology_network(seqs, k=3, threshold=0.5)
    assert e.weights[("a", "b")] == pytest.approx(1.0)
    assert ("c", "d") not in e.weights
    with pytest.warns(UserWarning, match="shorter"):
        build_homology_network([SequenceRecord("s", "AC"), SequenceRecord("t", "ACD")], k=3)
    with pytest.raises(ConfigError):
        build_homology_network(seqs, k=1)


def test_homology_kmer_oracle():
    a, b = "ACACAC", "ACACGT"
    ca = Counter(a[i:i + 2] for i in range(len(a) - 1))  # AC:3 CA:2
    cb = Counter(b[i:i + 2] for i in range(len(b) - 1))  # AC:2 CA:1 CG:1 GT:1
    dot = sum(ca[k] * cb[k] for k in ca)
    expect = dot / math.sqrt(sum(v * v for v in ca.values()) * sum(v * v for v in cb.values()))
    assert expect == pytest.approx(8 / math.sqrt(13 * 7))
    e = build_homology_network([SequenceRecord("a", a), SequenceRecord("b", b)], k=2, threshold=0.1)
    assert e.weights[("a", "b")] == pytest.approx(expect, abs=1e-12)


@given(st.lists(st.text("ACDEG", min_size=3, max_size=12), min_size=2, max_size=6))
def test_homology_is_symmetric_without_self_edges(seqs):
    recs = [SequenceRecord(f"s{i}", s) for i, s in enumerate(seqs)]
    e = build_homology_network(recs, k=2, threshold=0.3)
    for (a, b), w in e.items():
        assert a < b and 0.3 <= w <= 1.0 + 1e-12


def test_hashed_kmer_features():
    t = hashed_kmer_features([SequenceRecord("a", "ACDEFGH"), SequenceRecord("b", "AC")], dim=16)
    assert t.values.shape == (2, 16)
    assert np.linalg.norm(t.values[0]) == pytest.approx(1.0)
    assert not t.values[1].any()
