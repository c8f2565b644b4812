"""Binary file formats and text configs connecting the pipeline stages.

Five little-endian formats, each opened by a 4-byte ASCII magic and a u32
version (currently 1):

========  =======================  =====================================================
magic     payload                  layout after the (magic, version) prefix
========  =======================  =====================================================
``DHUC``  tagged sample set        N u32, D u32, K u32; per sample: D*f32 features,
                                   i32 label (-1 = unlabeled), u8 source tag
``DHTC``  teacher cache            N u32, K u32, P u32; per sample: K*f32 logits,
                                   P*f32 latent
``DHSC``  score vector             u8 score id (0 = t1000, 1 = one_c_sum), N u32,
                                   N*f64 values
``DHQD``  selection distribution   N u32, f64 lambda, f64 iqpr, N*f64 q,
                                   N*u64 draw counts
``DHNM``  network parameters       L u32, L*u32 widths, K u32, f32 parameters in
                                   declaration order (per layer W row-major then b,
                                   finally head W then b)
========  =======================  =====================================================

Bulk feature/parameter data is stored as 32-bit floats; selection
probabilities as 64-bit.  Every reader bounds its reads by header-declared
sizes and raises :class:`~hetdistill.errors.FormatError` with a byte offset
on malformed input.  Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .datagen import SampleSet
from .errors import ConfigError, CrossFileError, FormatError
from .models import NetworkParams
from .sampler import SamplingPlan
from .scores import ScoreVector, TeacherCache

FORMAT_VERSION = 1

MAGIC_COLLECTION = b"DHUC"
MAGIC_CACHE = b"DHTC"
MAGIC_SCORE = b"DHSC"
MAGIC_DISTRIBUTION = b"DHQD"
MAGIC_MODEL = b"DHNM"

_SCORE_ID_CODES = {"t1000": 0, "one_c_sum": 1}
_SCORE_ID_NAMES = {v: k for k, v in _SCORE_ID_CODES.items()}

_Q_SUM_TOL = 1e-9


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Byte cursor with offset-carrying errors."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes, {len(self.data) - self.offset} left)",
                offset=self.offset,
            )
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        nbytes = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(nbytes, what), dtype=dtype).copy()

    def expect_magic(self, magic: bytes):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"{self.path}: bad magic {got!r}, expected {magic!r}", offset=0)

    def expect_version(self):
        version = self.u32("version")
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.path}: unsupported version {version}", offset=self.offset - 4)

    def done(self):
        if self.offset != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.offset} trailing bytes", offset=self.offset
            )


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", FORMAT_VERSION)


# ---------------------------------------------------------------------------
# DHUC: collections / labeled splits
# ---------------------------------------------------------------------------

def _sample_dtype(d: int) -> np.dtype:
    return np.dtype([("features", "<f4", (d,)), ("label", "<i4"), ("tag", "u1")])


def write_collection(path, samples: SampleSet) -> None:
    n = len(samples)
    if n < 1:
        raise FormatError("refusing to write an empty sample set")
    d = samples.feature_dim
    records = np.empty(n, dtype=_sample_dtype(d))
    records["features"] = samples.features.astype("<f4")
    records["label"] = samples.labels
    records["tag"] = samples.tags
    payload = _header(MAGIC_COLLECTION) + struct.pack("<III", n, d, samples.class_count) + records.tobytes()
    atomic_write_bytes(path, payload)


def read_collection(path) -> SampleSet:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(MAGIC_COLLECTION)
    reader.expect_version()
    n = reader.u32("sample count")
    d = reader.u32("feature dim")
    k = reader.u32("class count")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: empty sample set (N={n}, D={d})", offset=8)
    dtype = _sample_dtype(d)
    records = reader.array(dtype, n, "sample records")
    reader.done()
    return SampleSet(
        records["features"].astype(np.float64),
        records["label"].astype(np.int32),
        records["tag"].astype(np.uint8),
        class_count=k,
    )


# ---------------------------------------------------------------------------
# DHTC: teacher cache
# ---------------------------------------------------------------------------

def write_cache(path, cache: TeacherCache) -> None:
    n, k = cache.logits.shape
    p = cache.latents.shape[1]
    body = np.concatenate([cache.logits, cache.latents], axis=1).astype("<f4")
    payload = _header(MAGIC_CACHE) + struct.pack("<III", n, k, p) + body.tobytes()
    atomic_write_bytes(path, payload)


def read_cache(path) -> TeacherCache:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(MAGIC_CACHE)
    reader.expect_version()
    n = reader.u32("sample count")
    k = reader.u32("class count")
    p = reader.u32("latent dim")
    if n < 1 or k < 2 or p < 1:
        raise FormatError(f"{path}: bad cache dims (N={n}, K={k}, P={p})", offset=8)
    body = reader.array("<f4", n * (k + p), "cache body").reshape(n, k + p)
    reader.done()
    return TeacherCache(body[:, :k].astype(np.float64), body[:, k:].astype(np.float64))


# ---------------------------------------------------------------------------
# DHSC: scores
# ---------------------------------------------------------------------------

def write_scores(path, scores: ScoreVector) -> None:
    if scores.score_id not in _SCORE_ID_CODES:
        raise FormatError(f"score id {scores.score_id!r} has no file encoding")
    payload = (
        _header(MAGIC_SCORE)
        + struct.pack("<BI", _SCORE_ID_CODES[scores.score_id], len(scores))
        + scores.values.astype("<f8").tobytes()
    )
    atomic_write_bytes(path, payload)


def read_scores(path) -> ScoreVector:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(MAGIC_SCORE)
    reader.expect_version()
    code = reader.u8("score id")
    if code not in _SCORE_ID_NAMES:
        raise FormatError(f"{path}: unknown score id {code}", offset=reader.offset - 1)
    n = reader.u32("score count")
    if n < 1:
        raise FormatError(f"{path}: empty score vector", offset=reader.offset - 4)
    values = reader.array("<f8", n, "score values")
    reader.done()
    return ScoreVector(_SCORE_ID_NAMES[code], values)


# ---------------------------------------------------------------------------
# DHQD: selection distribution
# ---------------------------------------------------------------------------

def write_distribution(path, plan: SamplingPlan) -> None:
    payload = (
        _header(MAGIC_DISTRIBUTION)
        + struct.pack("<Idd", plan.size, plan.lam, plan.iqpr)
        + plan.q.astype("<f8").tobytes()
        + plan.draw_counts.astype("<u8").tobytes()
    )
    atomic_write_bytes(path, payload)


def read_distribution(path) -> SamplingPlan:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(MAGIC_DISTRIBUTION)
    reader.expect_version()
    n = reader.u32("sample count")
    if n < 1:
        raise FormatError(f"{path}: empty distribution", offset=reader.offset - 4)
    lam = reader.f64("lambda")
    iqpr = reader.f64("iqpr")
    q_offset = reader.offset
    q = reader.array("<f8", n, "selection probabilities")
    counts = reader.array("<u8", n, "draw counts")
    reader.done()
    if np.any(q < 0) or abs(q.sum() - 1.0) > _Q_SUM_TOL:
        raise FormatError(
            f"{path}: selection probabilities sum to {q.sum()!r}, expected 1", offset=q_offset
        )
    # scores are not stored; reconstruct a plan good for drawing and metrics
    plan = SamplingPlan(
        scores=None, iqpr=iqpr, lam=lam, q=q, draw_counts=counts.astype(np.int64)
    )
    return plan


# ---------------------------------------------------------------------------
# DHNM: network parameters
# ---------------------------------------------------------------------------

def write_model(path, params: NetworkParams) -> None:
    widths = params.widths
    pieces = [
        _header(MAGIC_MODEL),
        struct.pack("<I", len(widths)),
        struct.pack(f"<{len(widths)}I", *widths),
        struct.pack("<I", params.class_count),
    ]
    for arr in params.all_arrays():
        pieces.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(pieces))


def read_model(path) -> NetworkParams:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.expect_magic(MAGIC_MODEL)
    reader.expect_version()
    n_widths = reader.u32("width count")
    if not 2 <= n_widths <= 64:
        raise FormatError(f"{path}: implausible width count {n_widths}", offset=reader.offset - 4)
    widths = tuple(reader.u32(f"width {i}") for i in range(n_widths))
    k = reader.u32("class count")
    if any(w < 1 for w in widths) or k < 2:
        raise FormatError(f"{path}: bad dims widths={widths} K={k}", offset=12)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(
            reader.array("<f4", fan_out * fan_in, "layer weights").astype(np.float64).reshape(fan_out, fan_in)
        )
        biases.append(reader.array("<f4", fan_out, "layer biases").astype(np.float64))
    head_w = reader.array("<f4", k * widths[-1], "head weights").astype(np.float64).reshape(k, widths[-1])
    head_b = reader.array("<f4", k, "head biases").astype(np.float64)
    reader.done()
    return NetworkParams(widths, k, weights, biases, head_w, head_b)


# ---------------------------------------------------------------------------
# cross-file consistency
# ---------------------------------------------------------------------------

def check_dims(name_a: str, value_a: int, name_b: str, value_b: int) -> None:
    if value_a != value_b:
        raise CrossFileError(f"{name_a} = {value_a} does not match {name_b} = {value_b}")


def check_cache_against(cache: TeacherCache, collection: SampleSet | None = None, model: NetworkParams | None = None):
    if collection is not None:
        check_dims("cache sample count", len(cache), "collection sample count", len(collection))
    if model is not None:
        check_dims("cache class count", cache.class_count, "model class count", model.class_count)
        check_dims("cache latent dim", cache.latent_dim, "model latent dim", model.latent_dim)


def check_scores_against(scores: ScoreVector, reference_n: int, reference_name: str):
    check_dims("score count", len(scores), reference_name, reference_n)


def check_plan_against(plan: SamplingPlan, reference_n: int, reference_name: str):
    check_dims("distribution size", plan.size, reference_name, reference_n)


# ---------------------------------------------------------------------------
# text configs
# ---------------------------------------------------------------------------

def parse_config_text(text: str, schema: dict[str, type], source: str = "<config>") -> dict:
    """Parse ``key=value`` lines with '#' comments; unknown keys are errors."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        caster = schema[key]
        try:
            out[key] = caster(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return out


def read_config(path, schema: dict[str, type]) -> dict:
    return parse_config_text(Path(path).read_text(), schema, source=str(path))
