"""Command-line interface: ``freqprint <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Failures also print one
JSON line ``{"error": ..., "kind": ..., "exit": ...}`` on stderr.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arch import ArchSimulator, ParseError, parse
from .attribution import UNKNOWN, Gallery, lineage_matrix, open_set_metrics
from .experiments import (
    pool_images,
    select_desk_pool,
    train_pool,
    verification_experiment,
)
from .fingerprint import (
    Fingerprint,
    SpectralFingerprint,
    attenuation_curve,
    extract_fingerprint,
    mean_magnitude_spectrum,
)
from .io import (
    DataError,
    load_image,
    load_image_dir,
    load_pool,
    load_tensor,
    manifest_entry,
    save_image,
    save_model,
    save_tensor,
    write_csv,
    write_json,
    write_manifest,
    write_report,
)
from .numeric import make_rng, power_law_rgb
from .synth import enumerate_pool, random_crop, synth_dataset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _plain(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _run_json(args, out, is_dir):
    params = {k: _plain(v) for k, v in vars(args).items() if k not in ("func", "jobs")}
    params["version"] = __version__
    path = Path(out) / "run.json" if is_dir else Path(str(out) + ".run.json")
    write_json(params, path)


def _source_images(directory, n, size, seed):
    if directory:
        _, imgs = load_image_dir(directory)
        return [im if im.shape[0] == 3 else np.repeat(im, 3, axis=0) for im in imgs]
    return [power_law_rgb(size, size, make_rng(seed, 100, i)) for i in range(n)]


# --------------------------------------------------------------------------
# commands


def cmd_pool_train(args):
    out = Path(args.out)
    (out / "weights").mkdir(parents=True, exist_ok=True)
    if args.n_freq is not None or args.n_grid is not None:
        configs = select_desk_pool(args.n_freq or 0, args.n_grid or 0, args.seed,
                                   args.seeds_per_config)
    else:
        freq, grid = enumerate_pool(args.scale, args.seeds_per_config)
        configs = freq + grid
    sources = _source_images(args.images, args.n_train, args.crop, args.seed)
    rng = make_rng(args.seed, 1)
    train = np.stack([random_crop(im, args.crop, rng)[0] for im in sources])
    kw = {"max_steps": args.max_steps}
    pool = train_pool(configs, train, args.jobs, kw, kw)
    entries = []
    for mid in sorted(pool):
        rel = f"weights/{mid}.fpt"
        save_model(pool[mid], out / rel)
        entries.append(manifest_entry(pool[mid], rel))
    write_manifest(entries, out)
    _run_json(args, out, True)


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pool = load_pool(args.pool)
    sources = _source_images(args.images, 16, 2 * args.crop, args.seed)
    X, labels, rows = synth_dataset(pool, sources, make_rng(args.seed), args.n, args.crop)
    for r, img in zip(rows, X):
        r["file"] = f"{r['index']:06d}.ppm"
        save_image(img, out / r["file"])
    write_csv(rows, ("index", "file", "model_id", "source", "crop_y", "crop_x"),
              out / "labels.csv")
    _run_json(args, out, True)


def cmd_fingerprint(args):
    _, imgs = load_image_dir(args.images)
    fp = extract_fingerprint(imgs, args.cutoff, args.channel)
    save_tensor(fp.as_matrix(), args.out)
    _run_json(args, args.out, False)


def _images_by_dir(dirs):
    out = {}
    for d in dirs:
        _, imgs = load_image_dir(d)
        out[Path(d).name] = np.stack(imgs)
    return out


def cmd_verify(args):
    if bool(args.pool) == bool(args.image_dirs):
        raise UsageError("give exactly one of --pool or --image-dirs")
    if args.pool:
        pool = load_pool(args.pool)
        sources = _source_images(args.images, 40, 2 * args.crop, args.seed)
        imgs = pool_images(pool, sources, args.n_images, args.seed, args.crop)
    else:
        imgs = _images_by_dir(args.image_dirs)
    if len(imgs) < 2:
        raise DataError("verification needs at least two models")
    rows, _ = verification_experiment(imgs, tuple(args.ns), args.pairs, args.pairs,
                                      args.seed, args.cutoff, args.channel)
    write_report(args.out, "verify", {"ns": args.ns, "pairs": args.pairs, "cutoff": args.cutoff,
                                      "channel": args.channel, "seed": args.seed}, rows)
    _run_json(args, args.out, True)


def _subdirs(root):
    dirs = sorted(p for p in Path(root).iterdir() if p.is_dir())
    if not dirs:
        raise DataError(f"{root}: expected one sub-directory per model")
    return dirs


def cmd_identify(args):
    feat = SpectralFingerprint(args.cutoff, args.channel).fit()
    gallery = {d.name: feat.fingerprint(load_image_dir(d)[1]) for d in _subdirs(args.gallery)}
    g = Gallery.from_fingerprints(gallery, args.tau)
    probes, truth, names = [], [], []
    for d in _subdirs(args.probes):
        files, imgs = load_image_dir(d)
        probes += list(feat.transform(imgs))
        truth += [d.name if d.name in gallery else UNKNOWN] * len(imgs)
        names += [f"{d.name}/{f}" for f in files]
    rows = []
    for name, p, t in zip(names, probes, truth):
        s = g.scores(p)
        i = int(np.argmax(s))
        best = float(s[i])
        rows.append({"probe": name, "truth": t, "argmax_id": g.ids[i],
                     "predicted": g.ids[i] if best >= g.tau else UNKNOWN, "best_score": best})
    open_set_metrics(probes, truth, g)  # validates that known probes exist
    write_report(args.out, "identify", {"tau": args.tau, "cutoff": args.cutoff,
                                        "channel": args.channel}, rows)
    _run_json(args, args.out, True)


def cmd_attenuation(args):
    spec = parse(Path(args.arch).read_text())
    img = load_image(args.input)
    if img.shape != spec.input:
        raise DataError(f"image shape {img.shape} does not match architecture input {spec.input}")
    sim = ArchSimulator(spec, args.seed).fit()
    curve = attenuation_curve(sim, img)
    write_csv([{"component": n, "hp_ratio": r} for n, r in curve],
              ("component", "hp_ratio"), args.out)
    _run_json(args, args.out, False)


def cmd_lineage(args):
    fps = {}
    for f in args.fingerprints:
        m = load_tensor(f)
        if m.ndim not in (2, 3):
            raise DataError(f"{f}: fingerprint must be a (H, W) or (C, H, W) tensor")
        fps[Path(f).stem] = Fingerprint(m.ravel(), m.shape, float("nan"), 0)
    if len({fp.dims for fp in fps.values()}) > 1:
        raise DataError("fingerprints differ in dimension")
    ids, M = lineage_matrix(fps)
    rows = [{"id": i, **{j: float(M[a, b]) for b, j in enumerate(ids)}}
            for a, i in enumerate(ids)]
    write_csv(rows, ["id"] + ids, args.out)
    _run_json(args, args.out, False)


def cmd_spectrum(args):
    img = load_image(args.image)
    S = mean_magnitude_spectrum([img], "mean")
    if args.log:
        S = np.log1p(S)
    if args.shifted:
        S = np.fft.fftshift(S)
    if str(args.out).endswith(".csv"):
        rows = [{"row": r, **{f"c{c}": float(S[r, c]) for c in range(S.shape[1])}}
                for r in range(S.shape[0])]
        write_csv(rows, ["row"] + [f"c{c}" for c in range(S.shape[1])], args.out)
    else:
        save_tensor(S, args.out)
    _run_json(args, args.out, False)


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="freqprint", description="Spectral fingerprints of generative models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pool = sub.add_parser("pool", help="synthetic generator pools")
    pool_sub = pool.add_subparsers(dest="action", required=True, parser_class=_Parser)
    t = pool_sub.add_parser("train", help="train a pool and write manifest + weights")
    t.add_argument("--scale", choices=("desk", "full"), default="desk")
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--images", type=Path, help="directory of training images (PGM/PPM)")
    t.add_argument("--seeds-per-config", type=int, default=1)
    t.add_argument("--n-freq", type=int, help="train only this many freq architectures")
    t.add_argument("--n-grid", type=int, help="train only this many grid generators")
    t.add_argument("--n-train", type=int, default=16)
    t.add_argument("--crop", type=int, default=32)
    t.add_argument("--max-steps", type=int, default=300)
    t.set_defaults(func=cmd_pool_train)

    s = sub.add_parser("synth", help="labelled synthetic dataset from a pool")
    s.add_argument("--pool", type=Path, required=True)
    s.add_argument("--images", type=Path)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--crop", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fingerprint", help="fingerprint of an image directory")
    f.add_argument("--images", type=Path, required=True)
    f.add_argument("--cutoff", type=float, default=0.5)
    f.add_argument("--channel", choices=("mean", "stack"), default="mean")
    f.add_argument("--out", type=Path, required=True)
    f.set_defaults(func=cmd_fingerprint)

    v = sub.add_parser("verify", help="1:1 verification report")
    v.add_argument("--pool", type=Path)
    v.add_argument("--image-dirs", type=Path, nargs="+")
    v.add_argument("--images", type=Path, help="source images for pool generation")
    v.add_argument("--ns", type=int, nargs="+", default=[1, 5, 10])
    v.add_argument("--pairs", type=int, default=500, help="positive and negative pairs each")
    v.add_argument("--n-images", type=int, default=60)
    v.add_argument("--crop", type=int, default=32)
    v.add_argument("--cutoff", type=float, default=0.5)
    v.add_argument("--channel", choices=("mean", "stack"), default="stack")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path, required=True)
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("identify", help="open-set identification report")
    i.add_argument("--gallery", type=Path, required=True)
    i.add_argument("--probes", type=Path, required=True)
    i.add_argument("--tau", type=float, default=0.5)
    i.add_argument("--cutoff", type=float, default=0.5)
    i.add_argument("--channel", choices=("mean", "stack"), default="stack")
    i.add_argument("--out", type=Path, required=True)
    i.set_defaults(func=cmd_identify)

    a = sub.add_parser("attenuation", help="per-component HP_ratio curve")
    a.add_argument("--arch", type=Path, required=True)
    a.add_argument("--input", type=Path, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", type=Path, required=True)
    a.set_defaults(func=cmd_attenuation)

    lin = sub.add_parser("lineage", help="pairwise fingerprint similarity matrix")
    lin.add_argument("--fingerprints", type=Path, nargs="+", required=True)
    lin.add_argument("--out", type=Path, required=True)
    lin.set_defaults(func=cmd_lineage)

    sp = sub.add_parser("spectrum", help="magnitude spectrum export")
    sp.add_argument("--image", type=Path, required=True)
    sp.add_argument("--log", action="store_true")
    sp.add_argument("--shifted", action="store_true")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_spectrum)

    for parser in (t, s, f, v, i, a, lin, sp):
        parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    return p


def _fail(kind, message, code):
    print(json.dumps({"error": message, "kind": kind, "exit": code}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 1)
    except (DataError, ParseError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
