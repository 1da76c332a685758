"""Binary tensor containers, checkpoints and JSONL records.

Container layout (all integers little-endian)::

    b"FLOW" | u32 version | u32 count | count x tensor | u32 len | UTF-8 text

    tensor: u16 name length | UTF-8 name | u8 rank | rank x u64 dims | f64 data

The trailing text holds the YAML config echo (checkpoints) or the JSON
manifest (datasets). Writers are deterministic, so save -> load -> save
reproduces the same bytes.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np
import yaml

from .codec import Codec
from .errors import FormatError
from .velocity import TrainerState, VelocityModel

MAGIC = b"FLOW"
VERSION = 1
KIND_CHECKPOINT = "checkpoint"
KIND_DATASET = "dataset"
KIND_DOWNSTREAM = "downstream"
KIND_ARRAY = "array"


# -- raw container ----------------------------------------------------------

def encode_container(tensors, text=""):
    """Serialise ``[(name, array), ...]`` plus a text trailer to bytes."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        a = np.asarray(arr, dtype="<f8")
        if a.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} has rank {a.ndim}")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(a.tobytes(order="C"))
    body = text.encode("utf-8")
    out.append(struct.pack("<I", len(body)) + body)
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated container: need {n} bytes at offset {self.pos}, "
                              f"have {len(self.buf) - self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_container(buf):
    """Inverse of :func:`encode_container`; returns (list of (name, array), text)."""
    r = _Reader(bytes(buf))
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, found {magic!r}")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported version: expected {VERSION}, found {version}")
    tensors = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64)
        tensors.append((name, data.reshape(shape)))
    (text_len,) = r.unpack("<I")
    text = r.take(text_len).decode("utf-8")
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after container")
    return tensors, text


def write_bytes(path, data):
    """Write via a temporary sibling so readers never see a half-written file."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def dump_text(obj):
    return yaml.safe_dump(obj, sort_keys=True, default_flow_style=False)


def _header(kind, text):
    meta = yaml.safe_load(text) or {}
    if meta.get("kind") != kind:
        raise FormatError(f"expected a {kind} file, found {meta.get('kind')!r}")
    return meta


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    state: TrainerState
    codec: Codec
    config: dict
    dataset_fingerprint: str = ""


def _model_tensors(prefix, model):
    return [(f"{prefix}.{i}", p) for i, p in enumerate(model.params)]


def checkpoint_bytes(ckpt):
    st = ckpt.state
    tensors = [
        ("codec.components", ckpt.codec.components),
        ("codec.mean", ckpt.codec.mean),
        ("codec.decoder", ckpt.codec.decoder),
        ("codec.offset", ckpt.codec.offset),
    ]
    tensors += _model_tensors("model", st.params)
    tensors += _model_tensors("ema", st.ema_params)
    tensors += [(f"adam.m.{i}", m) for i, m in enumerate(st.m)]
    tensors += [(f"adam.v.{i}", v) for i, v in enumerate(st.v)]
    meta = {
        "kind": KIND_CHECKPOINT,
        "step": int(st.step),
        "rng_seed": int(st.rng_seed),
        "codec_kind": ckpt.codec.kind,
        "input_dim": int(st.params.input_dim),
        "time_embed_dim": int(st.params.time_embed_dim),
        "hidden_dims": [int(h) for h in st.params.hidden_dims],
        "dataset_fingerprint": ckpt.dataset_fingerprint,
        "config": ckpt.config,
    }
    return encode_container(tensors, dump_text(meta))


def checkpoint_from_bytes(buf):
    tensors, text = decode_container(buf)
    meta = _header(KIND_CHECKPOINT, text)
    named = dict(tensors)
    groups = {"model": [], "ema": [], "adam.m": [], "adam.v": []}
    for name, arr in tensors:
        head, _, idx = name.rpartition(".")
        if head in groups:
            groups[head].append((int(idx), arr))
    lists = {k: [a for _, a in sorted(v, key=lambda p: p[0])] for k, v in groups.items()}
    try:
        codec = Codec(meta["codec_kind"], named["codec.components"], named["codec.mean"],
                      named["codec.decoder"], named["codec.offset"])
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing {exc}") from None
    dims = (meta["input_dim"], meta["time_embed_dim"], tuple(meta["hidden_dims"]))
    state = TrainerState(
        params=VelocityModel(lists["model"], *dims),
        ema_params=VelocityModel(lists["ema"], *dims),
        m=lists["adam.m"],
        v=lists["adam.v"],
        step=int(meta["step"]),
        rng_seed=int(meta["rng_seed"]),
    )
    return Checkpoint(state, codec, meta.get("config") or {}, meta.get("dataset_fingerprint", ""))


def save_checkpoint(path, ckpt):
    write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path):
    return checkpoint_from_bytes(read_bytes(path))


# -- datasets -----------------------------------------------------------------

def manifest_fingerprint(manifest):
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def dataset_bytes(ds):
    manifest = {"kind": KIND_DATASET, **ds.manifest()}
    tensors = [("x0", ds.x0), ("x1", ds.x1), ("y0", ds.y0), ("y1", ds.y1)]
    return encode_container(tensors, json.dumps(manifest, sort_keys=True))


def load_dataset(path):
    from .synthdata import DomainPairDataset

    tensors, text = decode_container(read_bytes(path))
    manifest = json.loads(text)
    if manifest.get("kind") != KIND_DATASET:
        raise FormatError(f"expected a dataset file, found {manifest.get('kind')!r}")
    t = dict(tensors)
    return DomainPairDataset(
        x0=t["x0"], x1=t["x1"], y0=t["y0"], y1=t["y1"],
        modality=manifest["modality"], alignment=manifest["alignment"],
        weak_p=manifest["weak_p"], seed=manifest["seed"], params=manifest.get("params", {}),
    )


def save_dataset(path, ds):
    write_bytes(path, dataset_bytes(ds))


# -- plain arrays (translate inputs/outputs) ------------------------------------

def save_array(path, x, meta=None):
    text = json.dumps({"kind": KIND_ARRAY, **(meta or {})}, sort_keys=True)
    write_bytes(path, encode_container([("x", np.asarray(x, dtype=np.float64))], text))


def load_array(path):
    """Load an array container, or a ``.npy`` file, or a whitespace text table."""
    if str(path).endswith(".npy"):
        return np.load(path).astype(np.float64)
    buf = read_bytes(path)
    if buf[:4] != MAGIC:
        if not buf.strip():
            return np.empty((0, 0))
        return np.atleast_2d(np.loadtxt(path, dtype=np.float64))
    tensors, _ = decode_container(buf)
    named = dict(tensors)
    if "x" not in named:
        raise FormatError("array container has no 'x' tensor")
    return named["x"]


# -- downstream predictors ------------------------------------------------------

def save_downstream(path, model):
    meta = {"kind": KIND_DOWNSTREAM, "model_kind": model.kind, "classes": int(model.classes),
            "side": int(model.side), "train_accuracy": float(model.train_accuracy)}
    write_bytes(path, encode_container([("weights", model.weights)], dump_text(meta)))


def load_downstream(path):
    from .evaluation import DownstreamModel

    tensors, text = decode_container(read_bytes(path))
    meta = _header(KIND_DOWNSTREAM, text)
    w = dict(tensors)["weights"]
    w.setflags(write=False)
    return DownstreamModel(meta["model_kind"], w, meta["classes"], meta["side"],
                           meta["train_accuracy"])


# -- JSONL --------------------------------------------------------------------

def append_jsonl(path, record):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
