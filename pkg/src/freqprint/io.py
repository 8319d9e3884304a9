"""File formats: PGM/PPM images, FPT1 tensors, pool manifests, metric reports."""

import csv
import io
import json
import math
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .attribution import UNKNOWN, best_accuracy, roc
from .nn import Norm
from .synth import BlockConfig, FreqGenerator, GridGenerator

__all__ = [
    "DataError",
    "load_image",
    "save_image",
    "load_image_dir",
    "save_tensor",
    "load_tensor",
    "tensor_bytes",
    "save_model",
    "load_model",
    "write_manifest",
    "load_manifest",
    "load_pool",
    "write_json",
    "write_csv",
    "read_csv",
    "write_report",
    "load_report",
    "MANIFEST_VERSION",
]

MANIFEST_VERSION = 1
MAGIC = b"FPT1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
U32_MAX = 2**32 - 1


class DataError(ValueError):
    """Malformed or inconsistent input data (as opposed to bad usage)."""


# --------------------------------------------------------------------------
# images


def _header_tokens(data, count):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("malformed header: unexpected end of file")
        tok = data[start:pos]
        if not tok.isdigit():
            raise DataError(f"malformed header: {tok!r} is not a number")
        tokens.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DataError("malformed header: missing whitespace before payload")
    return tokens, pos + 1


def load_image(path):
    """Binary PGM (P5) or PPM (P6), 8-bit, as ``(C, H, W)`` floats in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PGM/PPM file")
    (width, height, maxval), offset = _header_tokens(data, 3)
    if width < 1 or height < 1:
        raise DataError(f"{path}: empty image")
    if not 1 <= maxval <= 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    C = 1 if magic == b"P5" else 3
    need = width * height * C
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, C)
    if pixels.max(initial=0) > maxval:
        raise DataError(f"{path}: sample exceeds maxval {maxval}")
    return pixels.transpose(2, 0, 1).astype(np.float64) / maxval


def save_image(img, path):
    """Write 1-channel images as P5 and 3-channel images as P6 (round half up)."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ValueError(f"need a (1|3, H, W) image, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains NaN or Inf")
    q = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    C, H, W = q.shape
    header = f"{'P5' if C == 1 else 'P6'}\n{W} {H}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.transpose(1, 2, 0).tobytes())


def load_image_dir(directory):
    """All ``.pgm``/``.ppm`` files of a directory, sorted by name."""
    if not Path(directory).is_dir():
        raise DataError(f"{directory}: not a directory")
    paths = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in (".pgm", ".ppm"))
    if not paths:
        raise DataError(f"{directory}: no .pgm/.ppm images")
    return [p.name for p in paths], [load_image(p) for p in paths]


# --------------------------------------------------------------------------
# tensors


def tensor_bytes(arr, dtype="f64"):
    arr = np.asarray(arr)
    code = {"f32": 0, "f64": 1}[dtype]
    if arr.ndim > 255:
        raise DataError("rank exceeds 255")
    if any(d > U32_MAX for d in arr.shape):
        raise DataError("dimension exceeds u32 range")
    head = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def save_tensor(arr, path, dtype="f64"):
    Path(path).write_bytes(tensor_bytes(arr, dtype))


def load_tensor(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 6:
        raise DataError(f"{path}: truncated header")
    code, rank = data[4], data[5]
    if code not in DTYPES:
        raise DataError(f"{path}: unknown dtype code {code}")
    end = 6 + 4 * rank
    if len(data) < end:
        raise DataError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", data[6:end])
    count = math.prod(dims)
    need = count * DTYPES[code].itemsize
    if len(data) - end != need:
        raise DataError(f"{path}: length mismatch, payload has {len(data) - end} bytes, "
                        f"dims need {need}")
    arr = np.frombuffer(data[end:], dtype=DTYPES[code]).reshape(dims)
    return arr.astype(np.float64)


# --------------------------------------------------------------------------
# models and manifests


def _state_layout(net):
    layout = [(name, value.shape) for name, value in net.named_params()]
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Norm) and layer.kind == "batch":
            C = layer.params["gamma"].shape
            layout += [(f"{i}.running_mean", C), (f"{i}.running_var", C)]
    return layout


def save_model(model, path):
    """All parameters (and frozen norm statistics) as one flat f64 tensor."""
    state = model.net_.state_dict()
    layout = _state_layout(model.net_)
    missing = [name for name, _ in layout if name not in state]
    if missing:
        raise ValueError(f"model state incomplete (untrained?): {missing[0]}")
    vec = np.concatenate([np.ravel(state[name]) for name, _ in layout])
    save_tensor(vec, path)


def load_model(entry, root):
    family = entry["family"]
    if family == "freq":
        model = FreqGenerator.from_config(BlockConfig(**entry["config"])).build()
    elif family == "grid":
        model = GridGenerator(**entry["config"]).build()
    else:
        raise DataError(f"unknown family {family!r}")
    vec = load_tensor(Path(root) / entry["weights"])
    layout = _state_layout(model.net_)
    sizes = [math.prod(shape) for _, shape in layout]
    if vec.ndim != 1 or vec.size != sum(sizes):
        raise DataError(f"{entry['id']}: weight file holds {vec.size} values, "
                        f"expected {sum(sizes)}")
    parts = np.split(vec, np.cumsum(sizes)[:-1])
    model.net_.load_state_dict({name: p.reshape(shape)
                                for (name, shape), p in zip(layout, parts)})
    if family == "freq":
        model.trained_ = True
        model.final_residual_ = entry.get("final_residual")
    else:
        model.final_magnitude_ = entry.get("final_magnitude")
    model.n_steps_ = entry.get("n_steps", 0)
    return model


def manifest_entry(model, weights):
    if isinstance(model, FreqGenerator):
        cfg = model.config
        return {"id": cfg.model_id, "family": "freq", "config": asdict(cfg),
                "seed": cfg.seed, "final_residual": model.final_residual_,
                "n_steps": model.n_steps_, "weights": weights}
    cfg = model.config
    params = {"num_blocks": cfg.num_blocks, "seed": cfg.seed, "channels": cfg.channels,
              "kernel_size": model.kernel_size, "activation": model.activation,
              "bias": model.bias}
    return {"id": cfg.model_id, "family": "grid", "config": params, "seed": cfg.seed,
            "final_magnitude": model.final_magnitude_, "n_steps": model.n_steps_,
            "weights": weights}


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(entries, directory):
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("model ids must be unique")
    write_json({"version": MANIFEST_VERSION, "models": entries},
               Path(directory) / "manifest.json")


def load_manifest(directory):
    """Read and integrity-check ``manifest.json``: unique ids, weight files present."""
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"{directory}: no manifest.json")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported version {manifest.get('version')!r}")
    entries = manifest.get("models", [])
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate model ids")
    for e in entries:
        if not (Path(directory) / e["weights"]).is_file():
            raise DataError(f"{path}: missing weight file {e['weights']} for {e['id']}")
    return entries


def load_pool(directory):
    """``{model id: model}`` for every manifest entry."""
    return {e["id"]: load_model(e, directory) for e in load_manifest(directory)}


# --------------------------------------------------------------------------
# CSV / reports


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, header, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row[h]) for h in header])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _verify_summary(rows):
    out = {}
    for ns in sorted({int(r["ns"]) for r in rows}):
        sel = [r for r in rows if int(r["ns"]) == ns]
        scores = [float(r["score"]) for r in sel]
        labels = [r["label"] == "1" for r in sel]
        acc, tau = best_accuracy(scores, labels)
        out[str(ns)] = {"auc": roc(scores, labels).auc, "accuracy": acc, "tau": tau,
                        "n_pairs": len(sel)}
    return out


def _identify_summary(rows):
    known = [r["truth"] != UNKNOWN for r in rows]
    best = [float(r["best_score"]) for r in rows]
    kn = [r for r, k in zip(rows, known) if k]
    acc = float(np.mean([r["argmax_id"] == r["truth"] for r in kn])) if kn else float("nan")
    auc = roc(best, known).auc if any(known) and not all(known) else float("nan")
    return {"accuracy": acc, "auc": auc, "n_probes": len(rows)}


SUMMARIZERS = {
    "verify": (("pair", "ns", "score", "label"), _verify_summary),
    "identify": (("probe", "truth", "argmax_id", "predicted", "best_score"),
                 _identify_summary),
}


def write_report(directory, kind, params, rows):
    """Write ``rows.csv`` and ``summary.json``; the summary is derived from the rows."""
    header, summarize = SUMMARIZERS[kind]
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(rows, header, d / "rows.csv")
    # summarize what was written so the file is the single source of truth
    summary = summarize(read_csv(d / "rows.csv"))
    write_json({"kind": kind, "params": params, "summary": summary}, d / "summary.json")
    return summary


def _same(a, b):
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


def load_report(directory):
    """Load a report and check that its summary matches the rows."""
    d = Path(directory)
    meta = json.loads((d / "summary.json").read_text())
    rows = read_csv(d / "rows.csv")
    _, summarize = SUMMARIZERS[meta["kind"]]
    if not _same(summarize(rows), meta["summary"]):
        raise DataError(f"{d}: summary.json does not match rows.csv")
    return meta, rows
