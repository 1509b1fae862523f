"""Command-line entry point.

Subcommands cover the full pipeline: synthetic data (``sample``,
``collapse``), program execution and rendering (``execute``, ``render``),
training (``pretrain``, ``finetune``), explanation search (``infer``),
downstream tasks (``generate``, ``uncond``, ``coseg``, ``eval``), and the
built-in invariant suites (``selftest``).

Conventions shared by every subcommand:

* all randomness flows from ``--seed`` (default 0); a rerun with the same
  flags and inputs is byte-identical;
* ``--domain`` picks the vocabulary/executor pair;
* options may come from a JSON ``--config`` file; explicit flags win;
* each artifact gets a provenance manifest: directory outputs hold a
  single ``manifest.json``, single-file outputs get ``<file>.manifest.json``
  beside them.  Manifests record the command, resolved configuration,
  seed, domain, input content hashes, output names, and a timestamp taken
  from ``SOURCE_DATE_EPOCH`` (0 when unset, keeping reruns identical);
* exit codes: 0 success, 2 usage, 3 data error, 4 inference failure,
  5 internal error.

Canvas file formats: ``.sym`` is the lossless symbolic dump (one byte per
cell), ``.ppm``/``.pgm`` are renders, ``.lab`` is a label map (one byte
per cell, 0xFF for unlabeled).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, domains
from .bootstrap import FinetuneConfig, fail_penalty, finetune, pretrain
from .neural import ModelConfig
from .program import ProgramError
from .proposal import GrammarPrior, NeuralProposal
from .sampler import (GroupTriplet, SampleError, SamplerConfig, collapse,
                      load_triplets, make_dataset, save_triplets)
from .search import (BeamConfig, InferenceFailure, ObjectiveWeights,
                     infer_concepts, infer_group)
from .sexpr import TextParseError, from_text, to_text
from .tasks import (cosegment_group, few_shot_generate, generation_metrics,
                    unconditional_generate)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INFER = 4
EXIT_INTERNAL = 5

_ARCHS = {
    "desk": ModelConfig(width=64, heads=4, layers=2, mlp_mult=4),
    "paper": ModelConfig(width=256, heads=16, layers=8, mlp_mult=4),
}

_LABEL_UNSET = 0xFF


class DataError(RuntimeError):
    """Bad or mismatched input data (exit code 3)."""


# ----------------------------------------------------------------- manifest

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> int:
    return int(os.environ.get("SOURCE_DATE_EPOCH", "0"))


def write_manifest(target: str, command: str, config: dict, seed: int,
                   domain: str, inputs: list[str], outputs: list[str]) -> str:
    """Provenance record beside (file target) or inside (directory target)."""
    if os.path.isdir(target):
        path = os.path.join(target, "manifest.json")
    else:
        path = target + ".manifest.json"
    doc = {
        "command": command,
        "config": config,
        "domain": domain,
        "inputs": {p: _sha256(p) for p in sorted(set(inputs))},
        "outputs": sorted(outputs),
        "seed": seed,
        "timestamp": _timestamp(),
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ------------------------------------------------------------------ helpers

def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return doc


def _resolve(args, config: dict, name: str, default):
    """Flag if given, else config-file key, else default."""
    flag = getattr(args, name.replace("-", "_"), None)
    if flag is not None:
        return flag
    if name in config:
        return config[name]
    return default


def _load_dataset(path: str, domain: str) -> list[GroupTriplet]:
    if not os.path.exists(path):
        raise DataError(f"dataset not found: {path}")
    try:
        triplets = load_triplets(path)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: not a triplet dataset ({e})") from None
    if not triplets:
        raise DataError(f"{path}: empty dataset")
    for t in triplets:
        if t.domain != domain:
            raise DataError(f"{path}: concept {t.concept_id!r} has domain "
                            f"{t.domain!r}, expected {domain!r}")
    return triplets


def _load_model(path: str, domain: str) -> NeuralProposal:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    try:
        model = NeuralProposal.load(path)
    except (ValueError, KeyError) as e:
        raise DataError(f"{path}: cannot load checkpoint ({e})") from None
    if model.domain != domain:
        raise DataError(f"checkpoint domain {model.domain!r} does not match "
                        f"requested domain {domain!r}")
    return model


def _proposal_for(args, domain: str):
    if getattr(args, "prior", False):
        return GrammarPrior(domain)
    if not getattr(args, "model", None):
        raise DataError("need either --model CHECKPOINT or --prior")
    return _load_model(args.model, domain)


def _pick_concept(triplets: list[GroupTriplet], concept_id: str | None):
    if concept_id is None:
        return triplets[0]
    for t in triplets:
        if t.concept_id == concept_id:
            return t
    raise DataError(f"concept {concept_id!r} not in dataset "
                    f"(have: {', '.join(t.concept_id for t in triplets[:8])}"
                    f"{', ...' if len(triplets) > 8 else ''})")


def _beams_from(args, config: dict) -> BeamConfig:
    base = BeamConfig()
    return BeamConfig(
        beam_templates=int(_resolve(args, config, "beam-templates",
                                    base.beam_templates)),
        beam_members=int(_resolve(args, config, "beam-members",
                                  base.beam_members)),
        beam_bindings=int(_resolve(args, config, "beam-bindings",
                                   base.beam_bindings)),
        pop_budget=int(_resolve(args, config, "pop-budget", base.pop_budget)),
        pop_fill=int(_resolve(args, config, "pop-fill", base.pop_fill)),
        pop_param=int(_resolve(args, config, "pop-param", base.pop_param)),
        max_group=int(_resolve(args, config, "max-group", base.max_group)),
    )


def _weights_from(args, config: dict) -> ObjectiveWeights:
    base = ObjectiveWeights()
    return ObjectiveWeights(
        w_rec=float(_resolve(args, config, "lambda1", base.w_rec)),
        w_len=float(_resolve(args, config, "lambda2", base.w_len)),
    )


def _write_canvas(path: str, cells: np.ndarray, spec) -> None:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".sym":
        blob = spec.to_symbolic(cells)
    elif ext in (".ppm", ".pgm"):
        blob = spec.render(cells)
        want = ".ppm" if blob.startswith(b"P6") else ".pgm"
        if ext != want:
            raise DataError(f"domain {spec.name!r} renders {want} files, "
                            f"not {ext}")
    else:
        raise DataError(f"unsupported canvas extension {ext!r} "
                        "(use .sym, .ppm, or .pgm)")
    with open(path, "wb") as fh:
        fh.write(blob)


def _read_canvas(path: str, spec) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"canvas file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        return spec.from_symbolic(blob)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


def _read_labels(path: str, size: int) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"label file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) != size * size:
        raise DataError(f"{path}: expected {size * size} bytes, "
                        f"got {len(blob)}")
    grid = np.frombuffer(blob, dtype=np.uint8).reshape(size, size)
    labels = grid.astype(np.int32)
    labels[grid == _LABEL_UNSET] = -1
    return labels


def _write_labels(path: str, labels: np.ndarray) -> None:
    grid = labels.astype(np.int32).copy()
    if (grid >= _LABEL_UNSET).any():
        raise DataError("label ids above 254 do not fit the .lab format")
    grid[grid < 0] = _LABEL_UNSET
    with open(path, "wb") as fh:
        fh.write(grid.astype(np.uint8).tobytes())


_LABEL_COLORS = [
    (230, 60, 60), (60, 170, 60), (70, 90, 220), (230, 180, 40),
    (170, 70, 200), (60, 190, 190), (240, 120, 60), (140, 140, 60),
]


def _render_labels(labels: np.ndarray) -> bytes:
    h, w = labels.shape
    img = np.full((h, w, 3), 255, dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            v = int(labels[i, j])
            if v >= 0:
                img[i, j] = _LABEL_COLORS[v % len(_LABEL_COLORS)]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def _parse_program(path: str, vocab):
    try:
        return from_text(_read_text(path), vocab)
    except TextParseError as e:
        raise DataError(f"{path}: {e}") from None


# -------------------------------------------------------------- subcommands

def _cmd_sample(args) -> int:
    config = _load_config_file(args.config)
    cfg = SamplerConfig(
        max_depth=int(_resolve(args, config, "max-depth",
                               SamplerConfig.max_depth)),
        hole_prob=float(_resolve(args, config, "hole-prob",
                                 SamplerConfig.hole_prob)),
        pin_prob=float(_resolve(args, config, "pin-prob",
                                SamplerConfig.pin_prob)),
        share_prob=float(_resolve(args, config, "share-prob",
                                  SamplerConfig.share_prob)),
        group_size=int(_resolve(args, config, "group-size",
                                SamplerConfig.group_size)),
        fn_weights=config.get("fn-weights"),
    )
    triplets = make_dataset(args.domain, args.n, cfg, args.seed)
    save_triplets(args.output, triplets)
    write_manifest(args.output, "sample",
                   {"n": args.n, "sampler": dataclasses.asdict(cfg)},
                   args.seed, args.domain,
                   [args.config] if args.config else [], [args.output])
    print(f"wrote {len(triplets)} concepts to {args.output}")
    return EXIT_OK


def _cmd_execute(args) -> int:
    spec = domains.get_domain(args.domain)
    program = _parse_program(args.program, domains.get_vocab(args.domain))
    try:
        cells, _payload = spec.execute(program)
    except spec.execution_error as e:
        raise DataError(f"execution failed: {e}") from None
    _write_canvas(args.output, cells, spec)
    write_manifest(args.output, "execute", {}, args.seed, args.domain,
                   [args.program], [args.output])
    print(f"executed {args.program} -> {args.output}")
    return EXIT_OK


def _cmd_render(args) -> int:
    spec = domains.get_domain(args.domain)
    cells = _read_canvas(args.input, spec)
    blob = spec.render(cells)
    ext = os.path.splitext(args.output)[1].lower()
    want = ".ppm" if blob.startswith(b"P6") else ".pgm"
    if ext != want:
        raise DataError(f"domain {args.domain!r} renders {want} files, "
                        f"not {ext}")
    with open(args.output, "wb") as fh:
        fh.write(blob)
    write_manifest(args.output, "render", {}, args.seed, args.domain,
                   [args.input], [args.output])
    print(f"rendered {args.input} -> {args.output}")
    return EXIT_OK


def _cmd_collapse(args) -> int:
    config = _load_config_file(args.config)
    vocab = domains.get_vocab(args.domain)
    program = _parse_program(args.program, vocab)
    if program.kind != "concrete":
        raise DataError(f"{args.program}: collapse needs a concrete program, "
                        f"got a {program.kind}")
    cfg = SamplerConfig(
        hole_prob=float(_resolve(args, config, "hole-prob",
                                 SamplerConfig.hole_prob)),
        pin_prob=float(_resolve(args, config, "pin-prob",
                                SamplerConfig.pin_prob)),
        share_prob=float(_resolve(args, config, "share-prob",
                                  SamplerConfig.share_prob)),
    )
    rng = np.random.default_rng(args.seed)
    template = collapse(program, cfg, rng)
    text = to_text(template) + "\n"
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(text)
    write_manifest(args.output, "collapse",
                   {"hole-prob": cfg.hole_prob, "pin-prob": cfg.pin_prob,
                    "share-prob": cfg.share_prob},
                   args.seed, args.domain, [args.program], [args.output])
    print(text, end="")
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    config = _load_config_file(args.config)
    triplets = _load_dataset(args.data, args.domain)
    arch = _resolve(args, config, "arch", "desk")
    if arch not in _ARCHS:
        raise DataError(f"unknown arch {arch!r}; choose from "
                        f"{', '.join(sorted(_ARCHS))}")
    model = NeuralProposal(args.domain, _ARCHS[arch], seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    cfg = {
        "arch": arch,
        "epochs": int(_resolve(args, config, "epochs", 50)),
        "batch-size": int(_resolve(args, config, "batch-size", 16)),
        "lr": float(_resolve(args, config, "lr", 1e-4)),
        "val-frac": float(_resolve(args, config, "val-frac", 0.1)),
        "validate-every": int(_resolve(args, config, "validate-every", 5)),
        "patience": int(_resolve(args, config, "patience", 10)),
    }
    report = pretrain(model, triplets, args.out, epochs=cfg["epochs"],
                      batch_size=cfg["batch-size"], lr=cfg["lr"],
                      seed=args.seed, val_frac=cfg["val-frac"],
                      validate_every=cfg["validate-every"],
                      patience=cfg["patience"])
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "pretrain", cfg, args.seed, args.domain,
                   [args.data] + ([args.config] if args.config else []),
                   ["checkpoint.bin", "history.csv", "report.json"])
    print(f"pretrained {report['epochs_run']} epochs, "
          f"best val loss {report['best_val_loss']:.4f} -> {args.out}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    config = _load_config_file(args.config)
    concepts = _load_dataset(args.data, args.domain)
    model = _load_model(args.model, args.domain)
    base = FinetuneConfig()
    cfg = FinetuneConfig(
        rounds=int(_resolve(args, config, "rounds", base.rounds)),
        epochs=int(_resolve(args, config, "epochs", base.epochs)),
        validate_every=int(_resolve(args, config, "validate-every",
                                    base.validate_every)),
        patience=int(_resolve(args, config, "patience", base.patience)),
        batch_size=int(_resolve(args, config, "batch-size", base.batch_size)),
        lr=float(_resolve(args, config, "lr", base.lr)),
        val_frac=float(_resolve(args, config, "val-frac", base.val_frac)),
        dreams_per_round=int(_resolve(args, config, "dreams",
                                      base.dreams_per_round)),
        seed=args.seed,
        weights=_weights_from(args, config),
        beams=_beams_from(args, config),
    )
    os.makedirs(args.out, exist_ok=True)
    report = finetune(model, concepts, args.out, cfg)
    model.save(os.path.join(args.out, "checkpoint.bin"))
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "finetune",
                   {"rounds": cfg.rounds, "epochs": cfg.epochs,
                    "validate-every": cfg.validate_every,
                    "patience": cfg.patience, "batch-size": cfg.batch_size,
                    "lr": cfg.lr, "val-frac": cfg.val_frac,
                    "dreams": cfg.dreams_per_round},
                   args.seed, args.domain,
                   [args.data, args.model] +
                   ([args.config] if args.config else []),
                   ["checkpoint.bin", "history.csv", "report.json", "rounds"])
    rounds = [r for r in report["rounds"] if "val_best" in r]
    if rounds:
        print(f"finetuned {len(report['rounds'])} rounds, "
              f"val {rounds[0]['val_before']:.4f} -> "
              f"{min(r['val_best'] for r in rounds):.4f} -> {args.out}")
    else:
        print(f"finetuned {len(report['rounds'])} rounds -> {args.out}")
    return EXIT_OK


def _infer_chunk(payload):
    """Worker for --jobs: explain one index slice, return JSON-safe rows.

    Everything is reloaded from paths inside the worker so nothing that
    resists pickling crosses the process boundary.
    """
    (data_path, domain, model_path, weights_t, beams_t, indices) = payload
    from .sampler import triplet_to_json
    concepts = load_triplets(data_path)
    model = (GrammarPrior(domain) if model_path is None
             else NeuralProposal.load(model_path))
    weights = ObjectiveWeights(*weights_t)
    beams = BeamConfig(*beams_t)
    rows = []
    for i in indices:
        t = concepts[i]
        try:
            r = infer_group(t.canvases, model, weights, beams,
                            concept_id=t.concept_id)
            rows.append((i, triplet_to_json(r.triplet), r.objective, None))
        except InferenceFailure as e:
            rows.append((i, None, None, str(e)))
    return rows


def _cmd_infer(args) -> int:
    config = _load_config_file(args.config)
    concepts = _load_dataset(args.data, args.domain)
    model = _proposal_for(args, args.domain)
    weights = _weights_from(args, config)
    beams = _beams_from(args, config)
    jobs = max(1, args.jobs if args.jobs is not None else 1)

    triplets = {}    # index -> explained GroupTriplet
    objectives = {}  # index -> objective value
    failures = {}    # index -> message
    if jobs == 1 or len(concepts) == 1:
        results, fail = infer_concepts(concepts, model, weights, beams)
        for i, r in results.items():
            triplets[i], objectives[i] = r.triplet, r.objective
        failures = {i: d.get("error", "inference failure")
                    for i, d in fail.items()}
    else:
        import concurrent.futures as cf
        from .sampler import triplet_from_json
        model_path = None if args.prior else args.model
        weights_t = dataclasses.astuple(weights)
        beams_t = dataclasses.astuple(beams)
        slices = [list(range(len(concepts)))[k::jobs] for k in range(jobs)]
        payloads = [(args.data, args.domain, model_path, weights_t, beams_t,
                     ix) for ix in slices if ix]
        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            for rows in pool.map(_infer_chunk, payloads):
                for i, tjson, obj, err in rows:
                    if err is None:
                        triplets[i] = triplet_from_json(tjson)
                        objectives[i] = obj
                    else:
                        failures[i] = err

    os.makedirs(args.out, exist_ok=True)
    save_triplets(os.path.join(args.out, "explanations.jsonl"),
                  [triplets[i] for i in sorted(triplets)])
    diag = {
        "concepts": len(concepts),
        "explained": len(triplets),
        "failures": {concepts[i].concept_id: failures[i]
                     for i in sorted(failures)},
        "objectives": {concepts[i].concept_id: round(objectives[i], 6)
                       for i in sorted(objectives)},
        "mean_objective": (round(float(np.mean(list(objectives.values()))), 6)
                           if objectives else None),
    }
    with open(os.path.join(args.out, "diagnostics.json"), "w") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "infer",
                   {"beams": dataclasses.asdict(beams),
                    "lambda1": weights.w_rec, "lambda2": weights.w_len,
                    "prior": bool(args.prior), "jobs": jobs},
                   args.seed, args.domain,
                   [args.data] + ([args.model] if args.model else []) +
                   ([args.config] if args.config else []),
                   ["explanations.jsonl", "diagnostics.json"])
    print(f"explained {len(triplets)}/{len(concepts)} concepts, "
          f"mean objective {diag['mean_objective']} -> {args.out}")
    if not triplets:
        raise InferenceFailure("no concept could be explained", diag)
    return EXIT_OK


def _cmd_generate(args) -> int:
    config = _load_config_file(args.config)
    concepts = _load_dataset(args.data, args.domain)
    concept = _pick_concept(concepts, args.concept_id)
    model = _proposal_for(args, args.domain)
    spec = domains.get_domain(args.domain)
    weights = _weights_from(args, config)
    beams = _beams_from(args, config)
    res = infer_group(concept.canvases, model, weights=weights, beams=beams,
                      concept_id=concept.concept_id)
    generated = few_shot_generate(res.triplet.template, args.k, spec,
                                  seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    outputs = ["template.sexp", "samples.jsonl"]
    with open(os.path.join(args.out, "template.sexp"), "w") as fh:
        fh.write(to_text(res.triplet.template) + "\n")
    save_triplets(os.path.join(args.out, "samples.jsonl"), [generated])
    for i, cells in enumerate(generated.canvases):
        name = f"sample_{i:03d}.sym"
        _write_canvas(os.path.join(args.out, name), cells, spec)
        outputs.append(name)
    write_manifest(args.out, "generate",
                   {"k": args.k, "concept-id": concept.concept_id,
                    "objective": round(res.objective, 6),
                    "prior": bool(args.prior)},
                   args.seed, args.domain,
                   [args.data] + ([args.model] if args.model else []) +
                   ([args.config] if args.config else []), outputs)
    print(f"inferred template (objective {res.objective:.4f}), "
          f"sampled {args.k} members -> {args.out}")
    return EXIT_OK


def _cmd_uncond(args) -> int:
    model = _load_model(args.model, args.domain)
    gen = model if model.generative else model.clone(generative=True)
    spec = domains.get_domain(args.domain)
    reference = None
    inputs = [args.model]
    if args.reference:
        reference = [c for t in _load_dataset(args.reference, args.domain)
                     for c in t.canvases]
        inputs.append(args.reference)
    triplets, report = unconditional_generate(
        gen, args.n, seed=args.seed, group_size=args.group_size,
        reference=reference)
    os.makedirs(args.out, exist_ok=True)
    save_triplets(os.path.join(args.out, "concepts.jsonl"), triplets)
    if reference and triplets:
        generated = [c for t in triplets for c in t.canvases]
        report["metrics"] = generation_metrics(generated, reference, spec)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "uncond",
                   {"n": args.n, "group-size": args.group_size},
                   args.seed, args.domain, inputs,
                   ["concepts.jsonl", "report.json"])
    print(f"dreamed {len(triplets)}/{args.n} concepts -> {args.out}")
    return EXIT_OK


def _cmd_coseg(args) -> int:
    config = _load_config_file(args.config)
    concepts = _load_dataset(args.data, args.domain)
    concept = _pick_concept(concepts, args.concept_id)
    spec = domains.get_domain(args.domain)
    if not 0 <= args.labeled_index < len(concept.canvases):
        raise DataError(f"labeled index {args.labeled_index} outside the "
                        f"group of {len(concept.canvases)}")
    reference = _read_labels(args.labels, spec.canvas_size)
    if not (reference >= 0).any():
        raise DataError(f"{args.labels}: reference labels cover no cells")
    kwargs = {}
    inputs = [args.data, args.labels]
    if args.use_programs:
        kwargs["triplet"] = concept
    else:
        kwargs["model"] = _proposal_for(args, args.domain)
        kwargs["weights"] = _weights_from(args, config)
        kwargs["beams"] = _beams_from(args, config)
        if args.model:
            inputs.append(args.model)
    result = cosegment_group(concept.canvases, args.labeled_index, reference,
                             spec, seed=args.seed, **kwargs)
    os.makedirs(args.out, exist_ok=True)
    outputs = ["mapping.json"]
    for i, labels in enumerate(result.labels):
        _write_labels(os.path.join(args.out, f"member_{i:03d}.lab"), labels)
        with open(os.path.join(args.out, f"member_{i:03d}.ppm"), "wb") as fh:
            fh.write(_render_labels(labels))
        outputs += [f"member_{i:03d}.lab", f"member_{i:03d}.ppm"]
    with open(os.path.join(args.out, "mapping.json"), "w") as fh:
        json.dump({"parts": [list(map(str, p)) for p in result.parts],
                   "part_to_label": {str(k): v for k, v in
                                     result.meta["part_to_label"].items()},
                   "template": to_text(result.meta["template"])},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "coseg",
                   {"labeled-index": args.labeled_index,
                    "concept-id": concept.concept_id,
                    "use-programs": bool(args.use_programs)},
                   args.seed, args.domain, inputs, outputs)
    print(f"segmented {len(result.labels)} members -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _load_config_file(args.config)
    concepts = _load_dataset(args.data, args.domain)
    model = _proposal_for(args, args.domain)
    weights = _weights_from(args, config)
    beams = _beams_from(args, config)
    results, failures = infer_concepts(concepts, model, weights, beams)
    rows = []
    for i, t in enumerate(concepts):
        if i in results:
            rows.append((t.concept_id, round(results[i].objective, 6), "ok"))
        else:
            rows.append((t.concept_id,
                         round(fail_penalty(weights, len(t.canvases)), 6),
                         "failed"))
    mean_o = float(np.mean([r[1] for r in rows]))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "objectives.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["concept_id", "objective", "status"])
        w.writerows(rows)
    summary = {"concepts": len(concepts), "failures": len(failures),
               "mean_objective": round(mean_o, 6)}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "eval",
                   {"prior": bool(args.prior),
                    "lambda1": weights.w_rec, "lambda2": weights.w_len},
                   args.seed, args.domain,
                   [args.data] + ([args.model] if args.model else []) +
                   ([args.config] if args.config else []),
                   ["objectives.csv", "summary.json"])
    print(f"mean objective {mean_o:.4f} over {len(concepts)} concepts "
          f"({len(failures)} failures) -> {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ selftest

def _selftest_domain(domain: str, n: int, seed: int) -> list[tuple[str, bool, str]]:
    from .program import conforms
    from .sampler import format_targets, sample_concept
    from .sequences import linearize, parse

    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    cfg = SamplerConfig()
    rng = np.random.default_rng(seed)
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((f"{domain}: {name}", True, ""))
        except Exception as e:  # noqa: BLE001 - selftest reports all failures
            checks.append((f"{domain}: {name}", False,
                           f"{type(e).__name__}: {e}"))

    def ir_roundtrip():
        from .sampler import sample_program
        for _ in range(n):
            z = sample_program(vocab, cfg, rng,
                               context=spec.context_factory())
            toks = linearize(z)
            assert parse(toks, vocab) == z
            assert tuple(linearize(parse(toks, vocab))) == tuple(toks)

    def collapse_soundness():
        from .sampler import sample_program
        for _ in range(n):
            z = sample_program(vocab, cfg, rng,
                               context=spec.context_factory())
            tp = collapse(z, cfg, rng)
            assert conforms(z, tp) is not None

    def target_roundtrip():
        for i in range(max(2, n // 10)):
            t = sample_concept(spec, cfg, rng, f"selftest-{i}")
            examples = format_targets(t, rng)
            per_member = [e for e in examples if e.role != "template"]
            for m, program in enumerate(t.programs):
                exp_ex = per_member[2 * m]
                par_ex = per_member[2 * m + 1]
                rebuilt = _rebuild(t.template, exp_ex, par_ex, spec)
                assert rebuilt == program

    def executor_determinism():
        from .sampler import sample_program
        for _ in range(max(2, n // 10)):
            z = sample_program(vocab, cfg, rng,
                               context=spec.context_factory())
            a, _ = spec.execute(z)
            b, _ = spec.execute(z)
            assert (a == b).all()

    def metric_axioms():
        from .sampler import sample_program
        for _ in range(max(2, n // 10)):
            za = sample_program(vocab, cfg, rng,
                                context=spec.context_factory())
            zb = sample_program(vocab, cfg, rng,
                                context=spec.context_factory())
            a, _ = spec.execute(za)
            b, _ = spec.execute(zb)
            dab = spec.metric_distance(a, b)
            dba = spec.metric_distance(b, a)
            assert abs(dab - dba) < 1e-12
            assert spec.metric_distance(a, a) == 0.0
            assert dab >= 0.0

    def decode_validity():
        from .cursors import TemplateCursor
        from .proposal import sample_stream
        prior = GrammarPrior(domain)
        for i in range(n):
            r = np.random.default_rng((seed, i))
            cur = TemplateCursor(vocab, spec.context_factory())
            toks, _lp = sample_stream(prior, "template", [], (), cur, r)
            parse((vocab.start_id,) + tuple(toks), vocab)

    check("ir-roundtrip", ir_roundtrip)
    check("collapse-soundness", collapse_soundness)
    check("target-roundtrip", target_roundtrip)
    check("executor-determinism", executor_determinism)
    check("metric-axioms", metric_axioms)
    check("decode-validity", decode_validity)
    return checks


def _rebuild(template, exp_ex, par_ex, spec):
    """Reassemble a member by replaying its teacher-forcing targets."""
    from .cursors import ExpansionCursor, ParamCursor
    from .program import expand, instantiate
    vocab = template.vocab
    ec = ExpansionCursor(vocab, template, spec.context_factory())
    for tok in exp_ex.target:
        ec.advance(tok)
    assert ec.done()
    expansion = expand(template, ec.result())
    pc = ParamCursor(vocab, expansion, spec.context_factory())
    for tok in par_ex.target:
        pc.advance(tok)
    assert pc.done()
    return instantiate(expansion, pc.result())


def _cmd_selftest(args) -> int:
    domains_to_run = ([args.domain] if args.domain
                      else list(domains.domain_names()))
    n = 40 if args.quick else 200
    all_checks = []
    for d in domains_to_run:
        all_checks += _selftest_domain(d, n, args.seed)
    failed = [c for c in all_checks if not c[1]]
    for name, ok, msg in all_checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  {msg}" if msg else ""))
    print(f"{len(all_checks) - len(failed)}/{len(all_checks)} suites passed")
    return EXIT_OK if not failed else EXIT_INTERNAL


# ------------------------------------------------------------------- parser

def _add_common(p, domain_required=True):
    p.add_argument("--domain", required=domain_required,
                   choices=list(domains.domain_names()),
                   help="DSL/executor pair to use")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for all randomness (default 0)")
    p.add_argument("--config", help="JSON config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="templar",
        description="Template-program induction for visual concept groups.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("sample", help="generate synthetic concept triplets")
    _add_common(p)
    p.add_argument("--n", type=int, required=True, help="number of concepts")
    p.add_argument("--group-size", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--hole-prob", type=float, default=None)
    p.add_argument("--pin-prob", type=float, default=None)
    p.add_argument("--share-prob", type=float, default=None)
    p.add_argument("-o", "--output", required=True, help="output JSONL path")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("execute", help="run a program file onto a canvas")
    _add_common(p)
    p.add_argument("program", help="S-expression program file")
    p.add_argument("-o", "--output", required=True,
                   help="canvas output (.sym dump or .ppm/.pgm render)")
    p.set_defaults(func=_cmd_execute)

    p = sub.add_parser("render", help="render a symbolic canvas dump")
    _add_common(p)
    p.add_argument("input", help="symbolic canvas (.sym)")
    p.add_argument("-o", "--output", required=True, help=".ppm/.pgm output")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("collapse",
                       help="turn a concrete program into a template")
    _add_common(p)
    p.add_argument("program", help="S-expression program file")
    p.add_argument("--hole-prob", type=float, default=None)
    p.add_argument("--pin-prob", type=float, default=None)
    p.add_argument("--share-prob", type=float, default=None)
    p.add_argument("-o", "--output", required=True, help="template file out")
    p.set_defaults(func=_cmd_collapse)

    p = sub.add_parser("pretrain", help="train a proposal model on triplets")
    _add_common(p)
    p.add_argument("--data", required=True, help="triplet JSONL")
    p.add_argument("--arch", choices=sorted(_ARCHS), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--val-frac", type=float, default=None)
    p.add_argument("--validate-every", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune",
                       help="bootstrapped fine-tuning on concept groups")
    _add_common(p)
    p.add_argument("--data", required=True, help="concept JSONL")
    p.add_argument("--model", required=True, help="pretrained checkpoint")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--validate-every", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--val-frac", type=float, default=None)
    p.add_argument("--dreams", type=int, default=None)
    p.add_argument("--beam-templates", type=int, default=None)
    p.add_argument("--beam-members", type=int, default=None)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("infer", help="explain concept groups with templates")
    _add_common(p)
    p.add_argument("--data", required=True, help="concept JSONL")
    p.add_argument("--model", help="proposal checkpoint")
    p.add_argument("--prior", action="store_true",
                   help="use the grammar prior instead of a checkpoint")
    p.add_argument("--beam-templates", type=int, default=None)
    p.add_argument("--beam-members", type=int, default=None)
    p.add_argument("--beam-bindings", type=int, default=None)
    p.add_argument("--pop-budget", type=int, default=None)
    p.add_argument("--pop-fill", type=int, default=None)
    p.add_argument("--pop-param", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="concept-level worker processes (default 1); any "
                        "value yields identical output")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("generate",
                       help="few-shot generation from an input group")
    _add_common(p)
    p.add_argument("--data", required=True, help="concept JSONL")
    p.add_argument("--concept-id", default=None)
    p.add_argument("--model", help="proposal checkpoint")
    p.add_argument("--prior", action="store_true")
    p.add_argument("--k", type=int, default=5, help="samples to draw")
    p.add_argument("--beam-templates", type=int, default=None)
    p.add_argument("--beam-members", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("uncond",
                       help="unconditional concept generation (dreaming)")
    _add_common(p)
    p.add_argument("--model", required=True, help="proposal checkpoint")
    p.add_argument("--n", type=int, required=True, help="concepts to dream")
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--reference", help="triplet JSONL for novelty metrics")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_uncond)

    p = sub.add_parser("coseg",
                       help="propagate one member's labels across a group")
    _add_common(p)
    p.add_argument("--data", required=True, help="concept JSONL")
    p.add_argument("--concept-id", default=None)
    p.add_argument("--labeled-index", type=int, default=0)
    p.add_argument("--labels", required=True,
                   help="reference label map (.lab) for the labeled member")
    p.add_argument("--model", help="proposal checkpoint")
    p.add_argument("--prior", action="store_true")
    p.add_argument("--use-programs", action="store_true",
                   help="bypass inference, use the dataset's own programs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_coseg)

    p = sub.add_parser("eval", help="mean explanation objective of a model")
    _add_common(p)
    p.add_argument("--data", required=True, help="concept JSONL")
    p.add_argument("--model", help="proposal checkpoint")
    p.add_argument("--prior", action="store_true")
    p.add_argument("--beam-templates", type=int, default=None)
    p.add_argument("--beam-members", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("selftest", help="run the invariant suites")
    p.add_argument("--domain", choices=list(domains.domain_names()),
                   default=None, help="restrict to one domain (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true",
                   help="smaller sample counts")
    p.set_defaults(func=_cmd_selftest)

    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    cmd = args.cmd
    try:
        return args.func(args)
    except (DataError, SampleError, ProgramError, TextParseError) as e:
        print(f"templar {cmd}: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InferenceFailure as e:
        print(f"templar {cmd}: inference failure: {e}", file=sys.stderr)
        return EXIT_INFER
    except KeyboardInterrupt:
        print(f"templar {cmd}: interrupted", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"templar {cmd}: internal error: {type(e).__name__}: {e}",
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
