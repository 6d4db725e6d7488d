"""Parsers and writers for every external input format.

Formats (version 1):

* FASTA: ``>id description`` headers, wrapped sequence lines.
* Coordinates: simple ``index aa x y z`` lines, or PDB ATOM records (CA only,
  first model, first chain).
* PPI: whitespace separated ``idA idB score``; an optional header line.
* Similarity edges: ``idA idB similarity`` with similarity in [0, 1].
* Annotations: ``protein<TAB>GO:nnnnnnn<TAB>YYYY-MM-DD[<TAB>evidence]``.
* Feature tables: text (``protein-id <dim>`` header, then ``id v1 .. vd``)
  or HSE1 binary (little endian: ``b"HSE1"``, u32 count, u32 dim, then per
  row a u32 id byte length, the UTF-8 id, and ``dim`` float64 values).
"""

from __future__ import annotations

import datetime as dt
import re
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .numeric import ConfigError

ALPHABET = "ACDEFGHIKLMNPQRSTVWY" + "BZUOX"
ALPHABET_SET = set(ALPHABET)
THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F", "GLY": "G",
    "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L", "MET": "M", "ASN": "N",
    "PRO": "P", "GLN": "Q", "ARG": "R", "SER": "S", "THR": "T", "VAL": "V",
    "TRP": "W", "TYR": "Y", "ASX": "B", "GLX": "Z", "SEC": "U", "PYL": "O",
    "MSE": "M",
}
GO_ID = re.compile(r"^GO:\d{7}$")


class ParseError(ValueError):
    def __init__(self, msg, lineno=None):
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)
        self.lineno = lineno


# -- sequences ---------------------------------------------------------------

@dataclass(frozen=True)
class SequenceRecord:
    id: str
    sequence: str


def parse_fasta(text: str) -> list[SequenceRecord]:
    records, cur_id, chunks, header_line = [], None, [], 0

    def flush():
        if cur_id is None:
            return
        seq = "".join(chunks)
        if not seq:
            raise ParseError(f"empty sequence for {cur_id}", header_line)
        records.append(SequenceRecord(cur_id, seq))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            parts = line[1:].split()
            if not parts:
                raise ParseError("header without id", lineno)
            cur_id, chunks, header_line = parts[0], [], lineno
            continue
        if cur_id is None:
            raise ParseError("sequence data before first header", lineno)
        seq = line.upper()
        if not set(seq.rstrip("*")) <= ALPHABET_SET:
            bad = sorted(set(seq) - ALPHABET_SET)
            raise ParseError(f"invalid residue letters {bad}", lineno)
        chunks.append(seq.rstrip("*"))
    flush()
    return records


def write_fasta(records, width: int = 60) -> str:
    out = []
    for r in records:
        out.append(f">{r.id}")
        out += [r.sequence[i:i + width] for i in range(0, len(r.sequence), width)]
    return "\n".join(out) + "\n"


# -- coordinates -------------------------------------------------------------

@dataclass
class CoordinateRecord:
    id: str
    indices: np.ndarray  # original residue numbers
    letters: str
    xyz: np.ndarray  # n x 3, Angstrom

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if len(self.letters) != len(self.indices) or len(self.indices) != self.xyz.shape[0]:
            raise ValueError("coordinate record fields have different lengths")
        if np.any(np.diff(self.indices) <= 0):
            raise ValueError("residue indices must be strictly increasing")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("non-finite coordinates")

    def __len__(self):
        return len(self.indices)


def parse_coords(text: str, protein_id: str = "") -> CoordinateRecord:
    """Parse simple ``index aa x y z`` text or PDB ATOM/HETATM CA records."""
    lines = text.splitlines()
    if any(l.startswith(("ATOM  ", "HETATM", "MODEL ", "HEADER")) for l in lines):
        return _parse_pdb_ca(lines, protein_id)
    idx, letters, xyz = [], [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError("expected 'index aa x y z'", lineno)
        try:
            i = int(parts[0])
            pos = [float(v) for v in parts[2:]]
        except ValueError:
            raise ParseError("unparseable index or coordinate", lineno) from None
        if not all(np.isfinite(pos)):
            raise ParseError("non-finite coordinate", lineno)
        if idx and i <= idx[-1]:
            raise ParseError(f"residue index {i} not increasing", lineno)
        aa = parts[1].upper()
        if len(aa) != 1:
            aa = THREE_TO_ONE.get(aa, "X")
        idx.append(i)
        letters.append(aa)
        xyz.append(pos)
    if not idx:
        raise ParseError("no residues found")
    return CoordinateRecord(protein_id, idx, "".join(letters), xyz)


def _parse_pdb_ca(lines, protein_id):
    idx, letters, xyz = [], [], []
    chain = None
    for lineno, line in enumerate(lines, 1):
        if line.startswith("ENDMDL"):
            break
        if not line.startswith(("ATOM  ", "HETATM")):
            continue
        if line[12:16].strip() != "CA" or line[16] not in (" ", "A"):
            continue
        ch = line[21]
        if chain is None:
            chain = ch
        elif ch != chain:
            continue
        try:
            i = int(line[22:26])
            pos = [float(line[30:38]), float(line[38:46]), float(line[46:54])]
        except ValueError:
            raise ParseError("unparseable ATOM record", lineno) from None
        if not all(np.isfinite(pos)):
            raise ParseError("non-finite coordinate", lineno)
        if idx and i <= idx[-1]:
            raise ParseError(f"residue index {i} not increasing", lineno)
        idx.append(i)
        letters.append(THREE_TO_ONE.get(line[17:20].strip(), "X"))
        xyz.append(pos)
    if not idx:
        raise ParseError("no CA atoms found")
    return CoordinateRecord(protein_id, idx, "".join(letters), xyz)


def write_coords(rec: CoordinateRecord) -> str:
    return "".join(f"{i} {a} {x!r} {y!r} {z!r}\n"
                   for i, a, (x, y, z) in zip(rec.indices, rec.letters, rec.xyz.tolist()))


# -- edge lists ---------------------------------------------------------------

@dataclass
class EdgeList:
    """Undirected weighted edges keyed by (a, b) with a < b."""
    weights: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.weights)

    def add(self, a, b, w):
        key = (a, b) if a < b else (b, a)
        if key not in self.weights or w > self.weights[key]:
            self.weights[key] = w

    def nodes(self) -> set:
        return {x for e in self.weights for x in e}

    def items(self):
        return sorted(self.weights.items())


class PpiEdgeList(EdgeList):
    pass


class SimilarityEdgeList(EdgeList):
    pass


def _parse_edges(text, cls, lo, hi, min_score=None):
    edges = cls()
    seen_data = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("expected 'idA idB score'", lineno)
        try:
            w = float(parts[2])
        except ValueError:
            if not seen_data:
                seen_data = True
                continue  # header

            raise ParseError(f"bad score {parts[2]!r}", lineno) from None
        if not (np.isfinite(w) and lo <= w <= hi):
            raise ParseError(f"score {w} outside [{lo}, {hi}]", lineno)
        seen_data = True
        a, b = parts[0], parts[1]
        if a == b:
            warnings.warn(f"line {lineno}: self-edge {a} dropped")
            continue
        if min_score is not None and w < min_score:
            continue
        edges.add(a, b, w)
    return edges


def parse_ppi_tsv(text: str, min_score: float = 0.0) -> PpiEdgeList:
    return _parse_edges(text, PpiEdgeList, 0.0, 1000.0, min_score)


def parse_similarity_tsv(text: str) -> SimilarityEdgeList:
    return _parse_edges(text, SimilarityEdgeList, 0.0, 1.0)


def write_edges(edges: EdgeList, header: str | None = None) -> str:
    lines = [header] if header else []
    lines += [f"{a}\t{b}\t{w!r}" for (a, b), w in edges.items()]
    return "\n".join(lines) + "\n"


# -- annotations and splits ---------------------------------------------------

@dataclass(frozen=True, order=True)
class Annotation:
    protein: str
    term: str
    date: dt.date
    evidence: str = ""


def parse_annotations(text: str) -> list[Annotation]:
    seen, out = set(), []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise ParseError("expected 'protein<TAB>GO id<TAB>date[<TAB>evidence]'", lineno)
        prot, term, date = (p.strip() for p in parts[:3])
        if not GO_ID.match(term):
            raise ParseError(f"malformed GO id {term!r}", lineno)
        try:
            day = dt.date.fromisoformat(date)
        except ValueError:
            raise ParseError(f"malformed date {date!r}", lineno) from None
        ann = Annotation(prot, term, day, parts[3].strip() if len(parts) == 4 else "")
        if ann not in seen:
            seen.add(ann)
            out.append(ann)
    return out


def write_annotations(anns) -> str:
    rows = []
    for a in anns:
        row = f"{a.protein}\t{a.term}\t{a.date.isoformat()}"
        rows.append(row + (f"\t{a.evidence}" if a.evidence else ""))
    return "\n".join(rows) + "\n"


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list

    def __post_init__(self):
        a, b, c = set(self.train), set(self.valid), set(self.test)
        if a & b or a & c or b & c:
            raise ValueError("splits overlap")

    def role(self) -> dict:
        r = {p: "train" for p in self.train}
        r.update({p: "valid" for p in self.valid})
        r.update({p: "test" for p in self.test})
        return r


def temporal_split(annotations, t1: dt.date, t2: dt.date, t3: dt.date) -> DatasetSplit:
    """Split proteins by earliest annotation date: [..t1) train, [t1,t2) valid, [t2,t3] test."""
    if not t1 < t2 < t3:
        raise ConfigError("split dates must satisfy t1 < t2 < t3")
    first: dict = {}
    for a in annotations:
        if a.protein not in first or a.date < first[a.protein]:
            first[a.protein] = a.date
    train, valid, test = [], [], []
    for p in sorted(first):
        d = first[p]
        if d < t1:
            train.append(p)
        elif d < t2:
            valid.append(p)
        elif d <= t3:
            test.append(p)
    return DatasetSplit(train, valid, test)


# -- feature tables -----------------------------------------------------------

@dataclass
class FeatureTable:
    ids: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise ValueError("feature matrix does not match id list")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate protein ids in feature table")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature values")
        self.index = {p: i for i, p in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def rows(self, ids) -> np.ndarray:
        return self.values[[self.index[p] for p in ids]]


HSE_MAGIC = b"HSE1"


def load_feature_table(data: bytes | str) -> FeatureTable:
    if isinstance(data, bytes) and data[:4] == HSE_MAGIC:
        return _load_hse1(data)
    text = data.decode() if isinstance(data, bytes) else data
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise ParseError("empty feature table")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "protein-id":
        raise ParseError("expected header 'protein-id <dim>'", 1)
    try:
        dim = int(head[1])
    except ValueError:
        raise ParseError("bad dimension in header", 1) from None
    if dim <= 0:
        raise ParseError("feature dimension must be positive", 1)
    ids, rows = [], []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split()
        if len(parts) != dim + 1:
            raise ParseError(f"expected {dim} values, got {len(parts) - 1}", lineno)
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise ParseError("unparseable feature value", lineno) from None
        ids.append(parts[0])
    return FeatureTable(ids, np.array(rows).reshape(len(ids), dim))


def _load_hse1(data: bytes) -> FeatureTable:
    try:
        count, dim = struct.unpack_from("<II", data, 4)
        if dim == 0:
            raise ParseError("feature dimension must be positive")
        off = 12
        ids, vals = [], np.empty((count, dim))
        for i in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            ids.append(data[off:off + n].decode("utf-8"))
            off += n
            vals[i] = np.frombuffer(data, dtype="<f8", count=dim, offset=off)
            off += 8 * dim
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"truncated HSE1 table: {exc}") from None
    if off != len(data):
        raise ParseError("trailing bytes after HSE1 table")
    return FeatureTable(ids, vals)


def dump_feature_table(table: FeatureTable, binary: bool = True) -> bytes:
    if not binary:
        lines = [f"protein-id {table.dim}"]
        lines += [p + " " + " ".join(repr(float(v)) for v in row) for p, row in zip(table.ids, table.values)]
        return ("\n".join(lines) + "\n").encode()
    out = [HSE_MAGIC, struct.pack("<II", len(table.ids), table.dim)]
    for p, row in zip(table.ids, table.values):
        b = p.encode("utf-8")
        out += [struct.pack("<I", len(b)), b, np.ascontiguousarray(row, dtype="<f8").tobytes()]
    return b"".join(out)


# -- sequence-derived stand-ins -------------------------------------------------

def kmer_profile(seq: str, k: int) -> dict:
    counts: dict = {}
    for i in range(len(seq) - k + 1):
        km = seq[i:i + k]
        counts[km] = counts.get(km, 0) + 1
    return counts


def build_homology_network(sequences, k: int = 3, threshold: float = 0.5) -> SimilarityEdgeList:
    """Cosine similarity of k-mer count profiles; keeps pairs with sim >= threshold.

    Stand-in for an alignment-based homology search.
    """
    if k < 2:
        raise ConfigError("k-mer size must be at least 2")
    if not 0.0 < threshold < 1.0:
        raise ConfigError("threshold must lie in (0, 1)")
    vocab: dict = {}
    rows, cols, vals = [], [], []
    ids = [r.id for r in sequences]
    for i, r in enumerate(sequences):
        if len(r.sequence) < k:
            warnings.warn(f"{r.id}: sequence shorter than k={k}; left isolated")
        for km, c in kmer_profile(r.sequence, k).items():
            rows.append(i)
            cols.append(vocab.setdefault(km, len(vocab)))
            vals.append(c)
    m = sp.csr_matrix((np.array(vals, float), (rows, cols)), shape=(len(ids), max(len(vocab), 1)))
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    m = sp.diags(1.0 / norms) @ m
    sim = (m @ m.T).tocoo()
    edges = SimilarityEdgeList()
    for i, j, s in zip(sim.row, sim.col, sim.data):
        if i < j and s >= threshold - 1e-12:
            edges.add(ids[i], ids[j], float(min(s, 1.0)))
    return edges


def hashed_kmer_features(sequences, dim: int, k: int = 3) -> FeatureTable:
    """Toy sequence featurizer: L2-normalised k-mer counts hashed into ``dim`` buckets.

    Keeps the pipeline self-contained; it is not a protein language model.
    """
    vals = np.zeros((len(sequences), dim))
    for i, r in enumerate(sequences):
        for km, c in kmer_profile(r.sequence, k).items():
            vals[i, zlib.crc32(km.encode()) % dim] += c
        n = np.linalg.norm(vals[i])
        if n > 0:
            vals[i] /= n
    return FeatureTable([r.id for r in sequences], vals)
