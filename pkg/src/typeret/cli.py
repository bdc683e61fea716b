"""Command-line front end.

Stages write flat files into a workspace directory. Each file records the hash
of the configuration that produced it and of its upstream stage; a stage whose
inputs were produced under a different configuration aborts with exit code 3,
and a stage whose own output is already current does nothing.
"""
import argparse
import configparser
import hashlib
import json
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

from typeret.errors import (
    MissingFileError,
    NoTestImagesError,
    NumericalError,
    StaleArtifactError,
    TyperetError,
    ValidationError,
)

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_STALE, EXIT_NUMERICAL = 0, 1, 2, 3, 4
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass
class RunConfig:
    manifest: str = "manifest.csv"
    workspace: str = "workspace"
    seed: int = None
    threads: int = 1
    sampling: str = "keypoint"
    protocol: str = "one-vs-other-docs"
    esvm: bool = True
    score_zero_relevant: bool = False
    # features
    contour_stride: int = 3
    contour_scales: tuple = (2.0, 4.0, 8.0)
    max_descriptors: int = 20000
    # encoder
    n_clusters: int = 100
    n_codebooks: int = 5
    lam: float = 1000.0
    power: float = 0.5
    target_dim: int = 6400
    local_dim: int = 128
    dirichlet_eps: float = 1e-3
    kmeans_iters: int = 100
    max_training_descriptors: int = 500000
    # esvm
    c_pos: float = 1000.0
    c_neg: float = 1.0
    esvm_tol: float = 1e-6
    esvm_max_iter: int = 100000
    # patches
    patches_per_class: int = 5000
    patch_size: int = 300
    crop_size: int = 224
    uniform_over: str = "images"
    patch_mode: str = "RGB"
    patches_dir: str = None


# (section, key) -> (field, parser)
def _bool(v):
    v = str(v).strip().lower()
    if v in ("1", "on", "yes", "true"):
        return True
    if v in ("0", "off", "no", "false"):
        return False
    raise ValidationError(f"not a boolean: {v!r}")


def _floats(v):
    return tuple(float(x) for x in str(v).split(",") if x.strip())


CONFIG_KEYS = {
    ("run", "manifest"): ("manifest", str),
    ("run", "workspace"): ("workspace", str),
    ("run", "seed"): ("seed", int),
    ("run", "threads"): ("threads", int),
    ("run", "sampling"): ("sampling", str),
    ("run", "protocol"): ("protocol", str),
    ("run", "esvm"): ("esvm", _bool),
    ("run", "score_zero_relevant"): ("score_zero_relevant", _bool),
    ("features", "contour_stride"): ("contour_stride", int),
    ("features", "contour_scales"): ("contour_scales", _floats),
    ("features", "max_descriptors"): ("max_descriptors", int),
    ("encoder", "n_clusters"): ("n_clusters", int),
    ("encoder", "n_codebooks"): ("n_codebooks", int),
    ("encoder", "lambda"): ("lam", float),
    ("encoder", "power"): ("power", float),
    ("encoder", "target_dim"): ("target_dim", int),
    ("encoder", "local_dim"): ("local_dim", int),
    ("encoder", "dirichlet_eps"): ("dirichlet_eps", float),
    ("encoder", "kmeans_iters"): ("kmeans_iters", int),
    ("encoder", "max_training_descriptors"): ("max_training_descriptors", int),
    ("esvm", "c_pos"): ("c_pos", float),
    ("esvm", "c_neg"): ("c_neg", float),
    ("esvm", "tol"): ("esvm_tol", float),
    ("esvm", "max_iter"): ("esvm_max_iter", int),
    ("patches", "patches_per_class"): ("patches_per_class", int),
    ("patches", "patch_size"): ("patch_size", int),
    ("patches", "crop_size"): ("crop_size", int),
    ("patches", "uniform_over"): ("uniform_over", str),
    ("patches", "mode"): ("patch_mode", str),
    ("patches", "out"): ("patches_dir", str),
}


def load_config(path=None, overrides=None):
    values = {}
    if path:
        if not os.path.isfile(path):
            raise ValidationError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path, encoding="utf-8")
        base = os.path.dirname(os.path.abspath(path))
        for section in parser.sections():
            for key, raw in parser.items(section):
                if (section, key) not in CONFIG_KEYS:
                    raise ValidationError(f"unknown config key [{section}] {key}")
                name, conv = CONFIG_KEYS[(section, key)]
                try:
                    values[name] = conv(raw)
                except ValueError as exc:
                    raise ValidationError(f"[{section}] {key}: {exc}") from None
        # paths in the file are relative to the file
        for name in ("manifest", "workspace", "patches_dir"):
            if values.get(name) and not os.path.isabs(values[name]):
                values[name] = os.path.join(base, values[name])
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = replace(RunConfig(), **values)
    _check_config(cfg)
    return cfg


def _check_config(cfg):
    from typeret.retrieval import PROTOCOLS

    if cfg.sampling not in ("keypoint", "contour"):
        raise ValidationError(f"sampling must be keypoint or contour, got {cfg.sampling!r}")
    if cfg.protocol not in PROTOCOLS:
        raise ValidationError(f"protocol must be one of {', '.join(PROTOCOLS)}")
    if cfg.threads < 1:
        raise ValidationError("threads must be >= 1")
    if cfg.seed is not None and not 0 <= cfg.seed < 2 ** 64:
        raise ValidationError("seed must be an unsigned 64-bit integer")


def require_seed(cfg):
    if cfg.seed is None:
        raise ValidationError("a seed is required: pass --seed or set [run] seed")
    return cfg.seed


# -- hashing -----------------------------------------------------------------

def digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def extract_params(cfg):
    from typeret.features import SiftConfig

    return {"sampling": cfg.sampling, "sift": asdict(SiftConfig()), "contour_stride": cfg.contour_stride,
            "contour_scales": list(cfg.contour_scales), "max_descriptors": cfg.max_descriptors,
            "seed": cfg.seed}


def encoder_config(cfg):
    from typeret.embedding import EncoderConfig, GmpConfig

    return EncoderConfig(n_clusters=cfg.n_clusters, n_codebooks=cfg.n_codebooks, gmp=GmpConfig(cfg.lam),
                         power=cfg.power, target_dim=cfg.target_dim, local_dim=cfg.local_dim,
                         dirichlet_eps=cfg.dirichlet_eps, kmeans_iters=cfg.kmeans_iters,
                         max_training_descriptors=cfg.max_training_descriptors, seed=cfg.seed)


def esvm_config(cfg):
    from typeret.esvm import EsvmConfig

    return EsvmConfig(c_pos=cfg.c_pos, c_neg=cfg.c_neg, tol=cfg.esvm_tol, max_iter=cfg.esvm_max_iter)


class Stages:
    """Expected config hashes of every stage for a config + manifest."""

    def __init__(self, cfg, manifest):
        self.cfg = cfg
        self.manifest = manifest
        self.extract = digest(extract_params(cfg))
        train_ids = sorted(e.image_id for e in manifest if e.split == "train")
        self.train = digest({"upstream": self.extract, "encoder": asdict(encoder_config(cfg)),
                             "train": train_ids})
        self.encode = digest({"upstream": self.train, "ids": [e.image_id for e in manifest]})
        self.esvm = digest({"upstream": self.encode, "esvm": asdict(esvm_config(cfg)),
                            "test": [e.image_id for e in manifest if e.split == "test"]})

    def meta(self, stage, upstream):
        return {"config_hash": getattr(self, stage), "upstream_hash": upstream, "seed": self.cfg.seed}


# -- workspace ---------------------------------------------------------------

def ws_path(cfg, *parts):
    return os.path.join(cfg.workspace, *parts)


def descriptor_path(cfg, image_id):
    return ws_path(cfg, "descriptors", hashlib.sha256(image_id.encode("utf-8")).hexdigest()[:24] + ".tfds")


MODEL_FILE = "model.tfem"
ENCODINGS_FILE = "encodings.tfgd"
ESVM_FILE = "encodings-esvm.tfgd"


def _peek_meta(path, loader):
    from typeret.formats import read_bytes

    if not os.path.exists(path):
        return None, None
    obj = loader(read_bytes(path))
    return obj[0], obj[-1]


def _expect(path, loader, expected, what, hint):
    """Load an upstream artifact and insist it was produced under ``expected``."""
    obj, meta = _peek_meta(path, loader)
    if obj is None:
        raise ValidationError(f"{what} missing ({path}); run `typeret {hint}` first")
    if meta.get("config_hash") != expected:
        raise StaleArtifactError(
            f"{what} was built with config {meta.get('config_hash')}, current config needs {expected}; "
            f"re-run `typeret {hint}`")
    return obj


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _image_path(cfg, entry):
    if os.path.isabs(entry.path):
        return entry.path
    return os.path.join(os.path.dirname(os.path.abspath(cfg.manifest)), entry.path)


def load_manifest(cfg):
    from typeret.retrieval import read_manifest

    if not os.path.isfile(cfg.manifest):
        raise ValidationError(f"manifest not found: {cfg.manifest}")
    return read_manifest(cfg.manifest)


def log(msg):
    print(msg, file=sys.stderr)


# -- commands ----------------------------------------------------------------

def _scan_tree(root):
    found = []
    for ty in sorted(os.listdir(root)):
        tdir = os.path.join(root, ty)
        if not os.path.isdir(tdir):
            continue
        for doc in sorted(os.listdir(tdir)):
            ddir = os.path.join(tdir, doc)
            if not os.path.isdir(ddir):
                continue
            for name in sorted(os.listdir(ddir)):
                if name.lower().endswith(IMAGE_EXTENSIONS):
                    found.append((ty, doc, name, os.path.join(ddir, name)))
    return found


def cmd_ingest(args):
    from typeret.retrieval import ManifestEntry, read_manifest, validate_manifest, write_manifest

    src = args.source
    out = args.out
    out_dir = os.path.dirname(os.path.abspath(out))
    train_types = set(filter(None, (args.train_types or "").split(",")))
    if os.path.isdir(src):
        found = _scan_tree(src)
        if not found:
            raise ValidationError(f"no images found under {src}")
        names = Counter(name for _, _, name, _ in found)
        entries = []
        for ty, doc, name, path in found:
            image_id = name if names[name] == 1 else f"{doc}/{name}"
            rel = os.path.relpath(path, out_dir)
            entries.append(ManifestEntry(image_id, doc, ty, "train" if ty in train_types else "test", rel))
        unknown = train_types - {e.type_label for e in entries}
        if unknown:
            raise ValidationError(f"--train-types names unknown types: {', '.join(sorted(unknown))}")
    elif os.path.isfile(src):
        if train_types:
            raise ValidationError("--train-types only applies to directory input")
        # keep paths valid relative to the new manifest location
        src_dir = os.path.dirname(os.path.abspath(src))
        entries = [e if os.path.isabs(e.path) else
                   replace(e, path=os.path.relpath(os.path.join(src_dir, e.path), out_dir))
                   for e in read_manifest(src)]
    else:
        raise ValidationError(f"no such file or directory: {src}")
    validate_manifest(entries)
    for e in entries:
        p = e.path if os.path.isabs(e.path) else os.path.join(out_dir, e.path)
        if not os.path.isfile(p):
            raise MissingFileError(f"image file missing for {e.image_id!r}: {p}")
    write_manifest(out, entries)
    by_type = Counter(e.type_label for e in entries)
    docs = {}
    for e in entries:
        docs.setdefault(e.type_label, set()).add(e.document_id)
    print(f"{len(entries)} images, {len(by_type)} types, {sum(len(d) for d in docs.values())} documents")
    for ty in sorted(by_type):
        split = "train" if any(e.split == "train" for e in entries if e.type_label == ty) else "test"
        print(f"  {ty}: {by_type[ty]} images in {len(docs[ty])} documents ({split})")
    return EXIT_OK


def cmd_extract(args, cfg):
    from typeret import features, formats, imgproc

    require_seed(cfg)
    manifest = load_manifest(cfg)
    st = Stages(cfg, manifest)
    os.makedirs(ws_path(cfg, "descriptors"), exist_ok=True)
    ecfg = features.ExtractConfig(sampling=cfg.sampling, contour_stride=cfg.contour_stride,
                                  contour_scales=cfg.contour_scales, max_descriptors=cfg.max_descriptors,
                                  seed=cfg.seed)

    def one(entry):
        out = descriptor_path(cfg, entry.image_id)
        if os.path.exists(out):
            ds, meta = formats.load_descriptor_set(formats.read_bytes(out))
            if meta.get("config_hash") == st.extract and ds.image_id == entry.image_id:
                return 0, len(ds)
        path = _image_path(cfg, entry)
        if not os.path.isfile(path):
            raise ValidationError(f"image file missing for {entry.image_id!r}: {path}")
        ds = features.extract(imgproc.read_image(path), entry.image_id, ecfg)
        formats.write_bytes(out, formats.dump_descriptor_set(ds, st.meta("extract", digest(entry.path))))
        return 1, len(ds)

    results = _map(one, manifest, cfg.threads)
    done = sum(r[0] for r in results)
    total = sum(r[1] for r in results)
    print(f"extract: {done} images processed, {len(manifest) - done} up to date, {total} descriptors")
    return EXIT_OK


def _load_descriptors(cfg, st, entries):
    from typeret import formats

    out = []
    for e in entries:
        ds = _expect(descriptor_path(cfg, e.image_id), formats.load_descriptor_set, st.extract,
                     f"descriptors of {e.image_id!r}", "extract")
        out.append(ds)
    return out


def cmd_train(args, cfg):
    from typeret import embedding, formats

    require_seed(cfg)
    manifest = load_manifest(cfg)
    st = Stages(cfg, manifest)
    model_path = ws_path(cfg, MODEL_FILE)
    _, meta = _peek_meta(model_path, formats.load_encoder)
    if meta and meta.get("config_hash") == st.train:
        print("train: model up to date")
        return EXIT_OK
    train = [e for e in manifest if e.split == "train"]
    if not train:
        raise ValidationError("manifest has no train-split images")
    sets = _load_descriptors(cfg, st, train)
    model = embedding.fit_encoder(sets, encoder_config(cfg))
    formats.write_bytes(model_path, formats.dump_encoder(model, st.meta("train", st.extract)))
    print(f"train: {len(sets)} images, {model.joint_pca.input_dim} -> {model.output_dim} dims")
    return EXIT_OK


def cmd_encode(args, cfg):
    from typeret import embedding, formats
    from typeret.errors import EmptyDescriptorSetError

    require_seed(cfg)
    manifest = load_manifest(cfg)
    st = Stages(cfg, manifest)
    out = ws_path(cfg, ENCODINGS_FILE)
    _, meta = _peek_meta(out, formats.load_global_descriptors)
    if meta and meta.get("config_hash") == st.encode:
        print("encode: encodings up to date")
        return EXIT_OK
    model = _expect(ws_path(cfg, MODEL_FILE), formats.load_encoder, st.train, "encoder model", "train")
    sets = _load_descriptors(cfg, st, manifest)

    def one(ds):
        try:
            return embedding.encode_image(ds, model)
        except EmptyDescriptorSetError as exc:
            raise ValidationError(str(exc)) from None

    encs = _map(one, sets, cfg.threads)
    formats.write_bytes(out, formats.dump_global_descriptors(encs, meta=st.meta("encode", st.train),
                                                             dim=model.output_dim))
    print(f"encode: {len(encs)} images, {model.output_dim} dims")
    return EXIT_OK


def cmd_esvm(args, cfg):
    from typeret import formats
    from typeret.esvm import NegativePool, esvm_transform_all

    require_seed(cfg)
    manifest = load_manifest(cfg)
    st = Stages(cfg, manifest)
    out = ws_path(cfg, ESVM_FILE)
    _, meta = _peek_meta(out, formats.load_global_descriptors)
    if meta and meta.get("config_hash") == st.esvm:
        print("esvm: transformed encodings up to date")
        return EXIT_OK
    encs = _expect(ws_path(cfg, ENCODINGS_FILE), formats.load_global_descriptors, st.encode,
                   "encodings", "encode")
    by_id = {g.image_id: g for g in encs}
    negs = [by_id[e.image_id] for e in manifest if e.split == "train"]
    test = [by_id[e.image_id] for e in manifest if e.split == "test"]
    if not negs:
        raise ValidationError("ESVM needs train-split images as negatives")
    pool = NegativePool.from_descriptors(negs, "train")
    transformed = esvm_transform_all(test, pool, esvm_config(cfg), cfg.threads)
    formats.write_bytes(out, formats.dump_global_descriptors(transformed, esvm=True,
                                                             meta=st.meta("esvm", st.encode),
                                                             dim=pool.dim))
    print(f"esvm: {len(transformed)} test images against {len(pool)} negatives")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    from typeret import formats
    from typeret.retrieval import metrics_from_vectors

    require_seed(cfg)
    manifest = load_manifest(cfg)
    st = Stages(cfg, manifest)
    if cfg.esvm:
        encs = _expect(ws_path(cfg, ESVM_FILE), formats.load_global_descriptors, st.esvm,
                       "ESVM encodings", "esvm")
    else:
        encs = _expect(ws_path(cfg, ENCODINGS_FILE), formats.load_global_descriptors, st.encode,
                       "encodings", "encode")
    by_id = {g.image_id: g.vector for g in encs}
    test = [e for e in manifest if e.split == "test"]
    if not test:
        raise NoTestImagesError("manifest has no test images")
    report = metrics_from_vectors([by_id[e.image_id] for e in test], [e.image_id for e in test],
                                  [e.type_label for e in test], [e.document_id for e in test],
                                  cfg.protocol, cfg.score_zero_relevant, cfg.threads)
    report.esvm = cfg.esvm
    name = f"metrics-{cfg.protocol}-esvm-{'on' if cfg.esvm else 'off'}.json"
    with open(ws_path(cfg, name), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_json() if args.json else report.table())
    return EXIT_OK


def cmd_patches(args, cfg):
    from typeret import clseval

    seed = require_seed(cfg)
    manifest = load_manifest(cfg)
    spec = clseval.PatchSpec(patches_per_class=cfg.patches_per_class, patch_size=cfg.patch_size,
                             crop_size=cfg.crop_size, seed=seed, uniform_over=cfg.uniform_over,
                             mode=cfg.patch_mode)
    out = args.out or cfg.patches_dir or ws_path(cfg, "patch-dataset")
    root = os.path.dirname(os.path.abspath(cfg.manifest))
    recs = clseval.sample_patches(manifest, spec, out, root=root, threads=cfg.threads)
    print(f"patches: {len(recs)} patches in {len({r.label for r in recs})} classes under {out}")
    return EXIT_OK


def cmd_score(args):
    from typeret import clseval

    if not os.path.isfile(args.predictions):
        raise ValidationError(f"predictions file not found: {args.predictions}")
    m = clseval.ConfusionMatrix.from_predictions(clseval.read_predictions(args.predictions))
    overall, average = clseval.score_confusion(m)
    print(f"overall accuracy: {overall:.1f}%")
    print(f"average accuracy: {average:.1f}%")
    if m.zero_row_classes:
        print(f"classes without test samples (excluded from average): {', '.join(m.zero_row_classes)}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="typeret", description="Type retrieval pipeline")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides [run] seed)")
    p.add_argument("--threads", type=int)
    p.add_argument("--protocol", choices=["one-vs-all", "one-vs-other-docs"])
    p.add_argument("--sampling", choices=["keypoint", "contour"])
    p.add_argument("--esvm", choices=["on", "off"])
    p.add_argument("--manifest", help="manifest CSV (overrides [run] manifest)")
    p.add_argument("--workspace", help="workspace directory (overrides [run] workspace)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="build a manifest from a directory tree or CSV")
    s.add_argument("source", help="<type>/<document>/<image> tree or manifest CSV")
    s.add_argument("--out", default="manifest.csv")
    s.add_argument("--train-types", help="comma-separated type labels for the train split")

    for name, helptext in (("extract", "local descriptors per image"), ("train", "fit the encoder"),
                           ("encode", "global descriptors per image"), ("esvm", "ESVM transform"),
                           ("evaluate", "retrieval metrics")):
        s = sub.add_parser(name, help=helptext)
        if name == "evaluate":
            s.add_argument("--json", action="store_true", help="print JSON instead of a table")

    s = sub.add_parser("patches", help="sample the classification patch dataset")
    s.add_argument("--out", help="output directory")

    s = sub.add_parser("score", help="accuracies from a predictions CSV")
    s.add_argument("predictions", help="CSV with image_id,true_label,predicted_label")
    return p


COMMANDS = {"extract": cmd_extract, "train": cmd_train, "encode": cmd_encode, "esvm": cmd_esvm,
            "evaluate": cmd_evaluate, "patches": cmd_patches}


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "ingest":
        return cmd_ingest(args)
    if args.command == "score":
        return cmd_score(args)
    overrides = {"seed": args.seed, "threads": args.threads, "protocol": args.protocol,
                 "sampling": args.sampling, "manifest": args.manifest, "workspace": args.workspace,
                 "esvm": None if args.esvm is None else args.esvm == "on"}
    cfg = load_config(args.config, overrides)
    os.makedirs(cfg.workspace, exist_ok=True)
    return COMMANDS[args.command](args, cfg)


def main(argv=None):
    try:
        code = run(argv)
    except ValidationError as exc:
        log(f"error: {exc}")
        code = EXIT_VALIDATION
    except StaleArtifactError as exc:
        log(f"stale artifact: {exc}")
        code = EXIT_STALE
    except NumericalError as exc:
        log(f"numerical failure: {exc}")
        code = EXIT_NUMERICAL
    except TyperetError as exc:
        log(f"error: {exc}")
        code = EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())
