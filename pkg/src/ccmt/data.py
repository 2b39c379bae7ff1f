"""On-disk dataset contract and synthetic data generation.

Binary layout ("CCMTEMB", little-endian throughout):

    magic "CCMTEMB" | u32 version=1 | u16 num_modalities=3 | 3x u32 width
    u32 num_classes | u64 sample_count | num_classes x (u16 len + utf8 name)
    records... | u32 CRC32 over all preceding bytes

    record: u64 sample_id | u32 label | per modality (original, translated,
    audio): u16 variant_count, then per variant: u32 token_count,
    u32 class_index (0xFFFFFFFF = none), token_count*width float32 values.

Floats are float32 at rest and widened to float64 in memory by the token
pipeline. A human-readable JSON-lines form (header line, then one record
per line, same field names) is accepted and produced behind the `jsonl`
flag for debugging.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataFormatError, ValidationError
from .tokens import Modality, ModalityTokens, SampleRecord, assemble

DATASET_MAGIC = b"CCMTEMB"
DATASET_VERSION = 1
NO_CLASS = 0xFFFFFFFF


@dataclass
class DatasetHeader:
    widths: Tuple[int, int, int]
    num_classes: int
    sample_count: int
    label_names: Tuple[str, ...]
    version: int = DATASET_VERSION
    num_modalities: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.label_names = tuple(self.label_names)
        self.validate()

    def validate(self):
        if self.num_modalities != 3 or len(self.widths) != 3:
            raise ValidationError("exactly three modalities are supported")
        if any(w < 1 for w in self.widths):
            raise ValidationError(f"widths must be positive, got {self.widths}")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be positive")
        if len(self.label_names) != self.num_classes:
            raise ValidationError(
                f"{len(self.label_names)} label names for {self.num_classes} classes"
            )
        if self.sample_count < 0:
            raise ValidationError("sample_count must be non-negative")


@dataclass
class Dataset:
    """In-memory dataset: header plus materialized records."""

    header: DatasetHeader
    records: List[SampleRecord]

    def record_by_id(self, sample_id: int) -> SampleRecord:
        for r in self.records:
            if r.sample_id == sample_id:
                return r
        raise ValidationError(f"no record with sample_id {sample_id}")


def _check_record(rec: SampleRecord, header: DatasetHeader, idx: int) -> None:
    if rec.label < 0 or rec.label >= header.num_classes:
        raise ValidationError(
            f"record {idx}: label {rec.label} out of range [0, {header.num_classes})"
        )
    for m in Modality:
        if m not in rec.modalities or not rec.modalities[m]:
            raise ValidationError(f"record {idx}: missing modality {m.name}")
        for v in rec.modalities[m]:
            if v.width != header.widths[int(m)]:
                raise ValidationError(
                    f"record {idx}: {m.name} width {v.width} != header {header.widths[int(m)]}"
                )


class _CrcWriter:
    def __init__(self, f):
        self.f = f
        self.crc = 0

    def write(self, b: bytes):
        self.f.write(b)
        self.crc = zlib.crc32(b, self.crc)


def write_dataset(records: Sequence[SampleRecord], header: DatasetHeader, path, jsonl=False):
    """Serialize records; header.sample_count must match len(records)."""
    if header.sample_count != len(records):
        raise ValidationError(
            f"header says {header.sample_count} samples, got {len(records)} records"
        )
    for i, rec in enumerate(records):
        _check_record(rec, header, i)
    if jsonl:
        _write_jsonl(records, header, path)
        return
    with open(path, "wb") as raw:
        w = _CrcWriter(raw)
        w.write(DATASET_MAGIC)
        w.write(struct.pack("<IH", DATASET_VERSION, header.num_modalities))
        for width in header.widths:
            w.write(struct.pack("<I", width))
        w.write(struct.pack("<IQ", header.num_classes, header.sample_count))
        for name in header.label_names:
            nb = name.encode("utf-8")
            w.write(struct.pack("<H", len(nb)))
            w.write(nb)
        for rec in records:
            w.write(struct.pack("<QI", rec.sample_id, rec.label))
            for m in Modality:
                variants = rec.modalities[m]
                w.write(struct.pack("<H", len(variants)))
                for v in variants:
                    ci = NO_CLASS if v.class_index is None else v.class_index
                    w.write(struct.pack("<II", v.n, ci))
                    w.write(np.ascontiguousarray(v.tokens, dtype="<f4").tobytes())
        raw.write(struct.pack("<I", w.crc & 0xFFFFFFFF))


class _CrcReader:
    """Sequential reader tracking byte offset and a running CRC."""

    def __init__(self, f, total_size: int):
        self.f = f
        self.crc = 0
        self.offset = 0
        self.total = total_size

    @property
    def remaining(self) -> int:
        return self.total - self.offset

    def take(self, n: int, what: str, record_index=None) -> bytes:
        b = self.f.read(n)
        if len(b) != n:
            raise DataFormatError(
                f"truncated while reading {what} at byte offset {self.offset} "
                f"(wanted {n}, got {len(b)})",
                offset=self.offset,
                record_index=record_index,
            )
        self.offset += n
        self.crc = zlib.crc32(b, self.crc)
        return b

    def unpack(self, fmt: str, what: str, record_index=None):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, record_index))


def _read_header(r: _CrcReader) -> DatasetHeader:
    magic = r.take(len(DATASET_MAGIC), "magic")
    if magic != DATASET_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", offset=0)
    version, num_modalities = r.unpack("<IH", "version")
    if version != DATASET_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=7)
    if num_modalities != 3:
        raise DataFormatError(f"expected 3 modalities, got {num_modalities}", offset=11)
    widths = tuple(r.unpack("<I", "width")[0] for _ in range(3))
    num_classes, sample_count = r.unpack("<IQ", "counts")
    if any(w < 1 for w in widths):
        raise DataFormatError(f"invalid widths {widths}", offset=r.offset)
    if num_classes < 1 or num_classes > 1_000_000:
        raise DataFormatError(f"implausible num_classes {num_classes}", offset=r.offset)
    names = []
    for i in range(num_classes):
        (ln,) = r.unpack("<H", f"label name {i} length")
        if ln > r.remaining:
            raise DataFormatError(
                f"label name {i} length {ln} exceeds remaining file size", offset=r.offset
            )
        try:
            names.append(r.take(ln, f"label name {i}").decode("utf-8"))
        except UnicodeDecodeError as e:
            raise DataFormatError(f"label name {i} is not valid UTF-8: {e}", offset=r.offset)
    try:
        return DatasetHeader(
            widths=widths,
            num_classes=num_classes,
            sample_count=sample_count,
            label_names=tuple(names),
        )
    except ValidationError as e:
        raise DataFormatError(f"invalid header: {e}", offset=r.offset)


def _read_record(r: _CrcReader, header: DatasetHeader, idx: int) -> SampleRecord:
    sample_id, label = r.unpack("<QI", f"record {idx} id/label", record_index=idx)
    if label >= header.num_classes:
        raise DataFormatError(
            f"record {idx}: label {label} >= num_classes {header.num_classes}",
            offset=r.offset,
            record_index=idx,
        )
    modalities = {}
    for m in Modality:
        (vc,) = r.unpack("<H", f"record {idx} {m.name} variant count", record_index=idx)
        if vc < 1:
            raise DataFormatError(
                f"record {idx}: {m.name} has zero variants", offset=r.offset, record_index=idx
            )
        width = header.widths[int(m)]
        variants = []
        for vi in range(vc):
            token_count, ci = r.unpack(
                "<II", f"record {idx} {m.name} variant {vi} header", record_index=idx
            )
            if token_count < 1:
                raise DataFormatError(
                    f"record {idx}: {m.name} variant {vi} has zero tokens",
                    offset=r.offset,
                    record_index=idx,
                )
            nbytes = token_count * width * 4
            if nbytes > r.remaining:
                raise DataFormatError(
                    f"record {idx}: {m.name} variant {vi} claims {nbytes} bytes of tokens, "
                    f"only {r.remaining} remain",
                    offset=r.offset,
                    record_index=idx,
                )
            buf = r.take(nbytes, f"record {idx} {m.name} variant {vi} tokens", record_index=idx)
            tokens = np.frombuffer(buf, dtype="<f4").reshape(token_count, width)
            class_index = None if ci == NO_CLASS else int(ci)
            try:
                variants.append(
                    ModalityTokens(
                        modality_id=m, tokens=tokens, class_index=class_index, encoder_tag=""
                    )
                )
            except ValidationError as e:
                raise DataFormatError(
                    f"record {idx}: {e}", offset=r.offset, record_index=idx
                ) from e
        modalities[m] = variants
    return SampleRecord(sample_id=sample_id, label=label, modalities=modalities)


def read_dataset(path, jsonl=False) -> Tuple[DatasetHeader, List[SampleRecord]]:
    """Read and validate a dataset file; the trailing CRC must match."""
    if jsonl:
        return _read_jsonl(path)
    with open(path, "rb") as f:
        header, stream = _stream_records(f, os.path.getsize(path))
        records = list(stream)
    return header, records


def iter_dataset(path):
    """Streaming read: (header, record generator) holding one record at a
    time in memory. The trailing CRC is verified when the generator is
    exhausted."""
    f = open(path, "rb")
    try:
        header, stream = _stream_records(f, os.path.getsize(path))
    except Exception:
        f.close()
        raise

    def closing():
        try:
            yield from stream
        finally:
            f.close()

    return header, closing()


def _stream_records(f, size: int):
    r = _CrcReader(f, total_size=size - 4)
    if size < len(DATASET_MAGIC) + 4:
        raise DataFormatError("file too short for magic and checksum", offset=0)
    header = _read_header(r)

    def gen():
        for i in range(header.sample_count):
            yield _read_record(r, header, i)
        if r.remaining != 0:
            raise DataFormatError(
                f"{r.remaining} unexpected bytes after last record", offset=r.offset
            )
        tail = f.read(4)
        if len(tail) != 4:
            raise DataFormatError("missing trailing checksum", offset=r.offset)
        (stored,) = struct.unpack("<I", tail)
        if stored != (r.crc & 0xFFFFFFFF):
            raise DataFormatError(
                f"checksum mismatch: stored {stored:#010x}, computed {r.crc & 0xFFFFFFFF:#010x}",
                offset=r.offset,
            )

    return header, gen()


def _record_to_obj(rec: SampleRecord) -> dict:
    return {
        "sample_id": rec.sample_id,
        "label": rec.label,
        "modalities": [
            {
                "variant_count": len(rec.modalities[m]),
                "variants": [
                    {
                        "token_count": v.n,
                        "class_index": v.class_index,
                        "tokens": [
                            [float(x) for x in row] for row in np.asarray(v.tokens, dtype=np.float32)
                        ],
                    }
                    for v in rec.modalities[m]
                ],
            }
            for m in Modality
        ],
    }


def _write_jsonl(records, header: DatasetHeader, path):
    with open(path, "w", encoding="utf-8") as f:
        head = {
            "magic": DATASET_MAGIC.decode("ascii"),
            "version": header.version,
            "num_modalities": header.num_modalities,
            "widths": list(header.widths),
            "num_classes": header.num_classes,
            "sample_count": header.sample_count,
            "label_names": list(header.label_names),
        }
        f.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            f.write(json.dumps(_record_to_obj(rec), sort_keys=True) + "\n")


def _read_jsonl(path) -> Tuple[DatasetHeader, List[SampleRecord]]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError("empty jsonl file", offset=0)
    try:
        head = json.loads(lines[0])
        if head.get("magic") != DATASET_MAGIC.decode("ascii"):
            raise DataFormatError(f"bad magic {head.get('magic')!r}", offset=0)
        if head.get("version") != DATASET_VERSION:
            raise DataFormatError(f"unsupported version {head.get('version')}", offset=0)
        header = DatasetHeader(
            widths=tuple(head["widths"]),
            num_classes=head["num_classes"],
            sample_count=head["sample_count"],
            label_names=tuple(head["label_names"]),
        )
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        if isinstance(e, DataFormatError):
            raise
        raise DataFormatError(f"invalid jsonl header: {e}", offset=0) from e
    if header.sample_count != len(lines) - 1:
        raise DataFormatError(
            f"header says {header.sample_count} samples, file has {len(lines) - 1} record lines"
        )
    records = []
    for i, line in enumerate(lines[1:]):
        try:
            obj = json.loads(line)
            modalities = {}
            for m in Modality:
                mo = obj["modalities"][int(m)]
                if mo["variant_count"] != len(mo["variants"]):
                    raise ValidationError("variant_count mismatch")
                modalities[m] = [
                    ModalityTokens(
                        modality_id=m,
                        tokens=np.asarray(v["tokens"], dtype=np.float32),
                        class_index=v["class_index"],
                    )
                    for v in mo["variants"]
                ]
            rec = SampleRecord(
                sample_id=int(obj["sample_id"]), label=int(obj["label"]), modalities=modalities
            )
            _check_record(rec, header, i)
            records.append(rec)
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise DataFormatError(f"record line {i}: {e}", record_index=i) from e
    return header, records


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic generators.

    k_range: (lo, hi) token-count bounds, either one pair for all modalities
    or one pair per modality. The separable task plants one class-mean cue
    per modality (text: in the class token; audio: in every token). The
    cross-modal xor task hides bit c1 in the original-text class token and
    bit c2 in all audio tokens with label = c1 xor c2, in balanced cell
    counts, so no single modality carries label information.
    """

    samples: int
    d: int = 16
    num_classes: int = 2
    task: str = "separable"
    k_range: Union[Tuple[int, int], Tuple[Tuple[int, int], ...]] = (8, 24)
    noise_std: float = 0.1
    seed: int = 0
    variants: int = 1
    widths: Optional[Tuple[int, int, int]] = None
    cue_scale: float = 1.0

    def __post_init__(self):
        if self.samples < 1:
            raise ValidationError("samples must be positive")
        if self.d < 1:
            raise ValidationError("d must be positive")
        if self.task not in ("separable", "xor"):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.task == "xor" and self.num_classes != 2:
            raise ValidationError("xor task requires num_classes == 2")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.variants < 1:
            raise ValidationError("variants must be >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        kr = self.k_range
        if len(kr) == 2 and all(isinstance(x, int) for x in kr):
            kr = (tuple(kr),) * 3
        kr = tuple(tuple(p) for p in kr)
        if len(kr) != 3 or any(len(p) != 2 or p[0] < 1 or p[1] < p[0] for p in kr):
            raise ValidationError(f"bad k_range {self.k_range!r}")
        self.k_range = kr
        if self.widths is not None:
            self.widths = tuple(self.widths)
            if len(self.widths) != 3 or any(w < 1 for w in self.widths):
                raise ValidationError("widths must be three positive ints")

    def width_of(self, m: Modality) -> int:
        return self.widths[int(m)] if self.widths is not None else self.d


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset; bit-identical for the same spec."""
    rng = np.random.default_rng(spec.seed)
    widths = tuple(spec.width_of(m) for m in Modality)

    if spec.task == "separable":
        # One cue direction per (modality, class).
        cues = {
            m: [_unit(rng, widths[int(m)]) * spec.cue_scale for _ in range(spec.num_classes)]
            for m in Modality
        }
        labels = [i % spec.num_classes for i in range(spec.samples)]
    else:
        xor_cues = {
            Modality.TEXT_ORIGINAL: _unit(rng, widths[0]) * spec.cue_scale,
            Modality.AUDIO: _unit(rng, widths[2]) * spec.cue_scale,
        }
        cells = [(i >> 1 & 1, i & 1) for i in range(4)]
        assignments = [cells[i % 4] for i in range(spec.samples)]
        labels = [c1 ^ c2 for c1, c2 in assignments]

    records = []
    for i in range(spec.samples):
        modalities = {}
        for m in Modality:
            w = widths[int(m)]
            lo, hi = spec.k_range[int(m)]
            variants = []
            for _ in range(spec.variants):
                n = int(rng.integers(lo, hi + 1))
                toks = rng.normal(0.0, spec.noise_std, (n, w))
                if m == Modality.AUDIO:
                    ci = None
                    if spec.task == "separable":
                        toks += cues[m][labels[i]]
                    else:
                        c2 = assignments[i][1]
                        toks += (1.0 if c2 else -1.0) * xor_cues[m]
                else:
                    ci = int(rng.integers(0, n))
                    if spec.task == "separable":
                        toks[ci] += cues[m][labels[i]]
                    elif m == Modality.TEXT_ORIGINAL:
                        c1 = assignments[i][0]
                        toks[ci] += (1.0 if c1 else -1.0) * xor_cues[m]
                    # translated text in the xor task stays pure noise
                variants.append(
                    ModalityTokens(
                        modality_id=m,
                        tokens=toks.astype(np.float32),
                        class_index=ci,
                        encoder_tag=f"synthetic-{spec.task}",
                    )
                )
            modalities[m] = variants
        records.append(SampleRecord(sample_id=i, label=labels[i], modalities=modalities))

    header = DatasetHeader(
        widths=widths,
        num_classes=spec.num_classes,
        sample_count=spec.samples,
        label_names=tuple(f"class{c}" for c in range(spec.num_classes)),
    )
    return Dataset(header=header, records=records)


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(0.0, 1.0, d)
    return v / np.linalg.norm(v)


@dataclass
class DatasetSplit:
    """Disjoint train/dev/test sample-id subsets, derived from one seed."""

    train: Tuple[int, ...]
    dev: Tuple[int, ...]
    test: Tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        sets = [set(self.train), set(self.dev), set(self.test)]
        if (
            sets[0] & sets[1]
            or sets[0] & sets[2]
            or sets[1] & sets[2]
        ):
            raise ValidationError("split subsets must be pairwise disjoint")

    def subset(self, name: str) -> Tuple[int, ...]:
        if name not in ("train", "dev", "test"):
            raise ValidationError(f"unknown split {name!r}")
        return getattr(self, name)


def split_dataset(sample_ids: Iterable[int], fractions=(0.7, 0.15, 0.15), seed=0) -> DatasetSplit:
    ids = list(sample_ids)
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValidationError(f"fractions must be non-negative and sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(len(ids) * fractions[0])
    n_dev = int(len(ids) * fractions[1])
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        dev=tuple(shuffled[n_train : n_train + n_dev]),
        test=tuple(shuffled[n_train + n_dev :]),
        seed=seed,
    )


def export_class_embeddings(model, dataset: Dataset, path, seed: int = 0) -> None:
    """Write one TSV row per sample: sample_id, label, then the final
    class-token embedding under eval-mode assembly (deterministic)."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in dataset.records:
            ts = assemble(rec, model.config, seed, eval_mode=True)
            emb = model.class_embedding(ts)
            cols = [str(rec.sample_id), str(rec.label)] + [repr(float(x)) for x in emb]
            f.write("\t".join(cols) + "\n")
