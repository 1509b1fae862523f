"""Bootstrapped fine-tuning: infer, re-train, dream, repeat.

Each round:

1. Run inference on the training concepts with the current model.
2. Build three data sources from the explanations found:
   * ``self``     — inferred template + members against the real canvases;
   * ``executed`` — the same programs, canvases replaced by their own
     executions (vision-grounded targets are always self-consistent);
   * ``dreamed``  — a generative clone (visual features zeroed) is trained
     on this round's examples and sampled for brand-new concepts, each
     executed to produce canvases.  Dreams duplicating anything seen before
     (same template token string, or the same multiset of canvas digests)
     are rejected and resampled within a bounded budget.
3. Train on minibatches whose source is picked uniformly among the
   non-empty sources; validate every ``validate_every`` epochs on held-out
   concepts by mean inference objective; keep the best snapshot; stop early
   when no improvement for ``patience`` epochs; restore the best snapshot
   at the end of the round.

Per-round seeds derive from (seed, round) so interrupted runs resume on
the identical stream.  Round artifacts (datasets, checkpoint, history
rows) land under ``run_dir/rounds/round_XX`` and a run is resumed by
loading the newest complete round checkpoint.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import domains
from .cursors import ExpansionCursor, ParamCursor, TemplateCursor
from .program import ProgramError, expand, instantiate
from .proposal import NeuralProposal, sample_stream
from .sampler import GroupTriplet, SampleError, format_targets, save_triplets
from .search import (BeamConfig, InferenceFailure, ObjectiveWeights,
                     infer_concepts, infer_group)
from .sequences import linearize


@dataclass(frozen=True)
class FinetuneConfig:
    rounds: int = 2
    epochs: int = 50
    validate_every: int = 5
    patience: int = 10               # epochs without improvement
    batch_size: int = 8
    lr: float = 1e-4
    val_frac: float = 0.25
    dreams_per_round: int = 8
    dream_group_size: int = 5
    dream_attempts: int = 4          # tries per requested dream
    gen_epochs: int = 3              # generative clone training per round
    divergence_loss: float = 1e3
    seed: int = 0
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    beams: BeamConfig = field(default_factory=BeamConfig)


def fail_penalty(weights: ObjectiveWeights, group_size: int) -> float:
    """Objective charged to a concept whose inference failed outright."""
    return weights.w_rec * group_size + 1.0


def validation_objective(model, concepts, weights, beams) -> float:
    vals = []
    for t in concepts:
        try:
            r = infer_group(t.canvases, model, weights, beams,
                            concept_id=t.concept_id)
            vals.append(r.objective)
        except InferenceFailure:
            vals.append(fail_penalty(weights, len(t.canvases)))
    return float(np.mean(vals)) if vals else 0.0


# ------------------------------------------------------------------ dreaming

def _group_key(template, canvases, spec):
    tp_key = tuple(linearize(template))
    digests = sorted(hashlib.sha256(spec.to_symbolic(c)).hexdigest()
                     for c in canvases)
    return tp_key, tuple(digests)


def dream_concepts(gen_model, n, group_size, rng, history_templates,
                   history_groups, concept_prefix="dream"):
    """Sample new concepts from the generative model, rejecting duplicates.

    Returns (triplets, stats).  A dream is rejected when its template token
    string is already in ``history_templates`` or its sorted canvas-digest
    tuple is in ``history_groups``; both sets are updated with accepted
    dreams.
    """
    spec = domains.get_domain(gen_model.domain)
    vocab = gen_model.vocab
    accepted = []
    attempts = 0
    rejected_dup = 0
    rejected_err = 0
    max_attempts = max(1, n) * max(1, group_size) * 8
    while len(accepted) < n and attempts < max_attempts:
        attempts += 1
        try:
            cur = TemplateCursor(vocab, spec.context_factory())
            sample_stream(gen_model, "template", [], (), cur, rng)
            template = cur.result()
            tp_cond = tuple(linearize(template))
            programs, canvases = [], []
            for _ in range(group_size):
                ec = ExpansionCursor(vocab, template, spec.context_factory())
                sample_stream(gen_model, "expansion", [], tp_cond, ec, rng)
                expansion = expand(template, ec.result())
                pc = ParamCursor(vocab, expansion, spec.context_factory())
                sample_stream(gen_model, "param", [],
                              tuple(linearize(expansion)), pc, rng)
                z = instantiate(expansion, pc.result())
                cells, _ = spec.execute(z)
                programs.append(z)
                canvases.append(cells)
        except (ProgramError, SampleError, spec.execution_error, RuntimeError):
            rejected_err += 1
            continue
        tp_key, g_key = _group_key(template, canvases, spec)
        if tp_key in history_templates or g_key in history_groups:
            rejected_dup += 1
            continue
        history_templates.add(tp_key)
        history_groups.add(g_key)
        accepted.append(GroupTriplet(
            domain=gen_model.domain,
            concept_id=f"{concept_prefix}-{len(accepted):04d}",
            template=template, programs=programs, canvases=canvases,
            source="dreamed"))
    stats = {"requested": n, "accepted": len(accepted), "attempts": attempts,
             "rejected_duplicate": rejected_dup, "rejected_error": rejected_err,
             "rejection_rate": (rejected_dup + rejected_err) / max(1, attempts)}
    return accepted, stats


# ------------------------------------------------------------ training loops

class _SourcePool:
    """Endless shuffled sampler over one source's examples."""

    def __init__(self, examples, rng):
        self.examples = list(examples)
        self.rng = rng
        self.order = []

    def take(self, n):
        out = []
        while len(out) < n:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.examples)))
            out.append(self.examples[int(self.order.pop())])
        return out


def train_epochs(model, pools, optimizers, epochs, batch_size, rng,
                 divergence_loss, on_epoch=None):
    """Uniform-source minibatch training.  Returns (mean_losses, diverged)."""
    sources = sorted(pools)
    n_total = sum(len(p.examples) for p in pools.values())
    steps = max(1, math.ceil(n_total / batch_size))
    history = []
    for ep in range(epochs):
        ep_losses = []
        for _ in range(steps):
            src = sources[int(rng.integers(len(sources)))]
            batch = pools[src].take(batch_size)
            losses = model.train_step(batch, optimizers)
            step_loss = float(np.mean(list(losses.values())))
            ep_losses.append(step_loss)
            if not np.isfinite(step_loss) or step_loss > divergence_loss:
                return history, True
        history.append(float(np.mean(ep_losses)))
        if on_epoch is not None:
            if on_epoch(ep, history[-1]) is False:
                break
    return history, False


def _snapshot(model):
    return {r: {k: v.copy() for k, v in d.params.items()}
            for r, d in model.decoders.items()}


def _restore(model, snap):
    for r, params in snap.items():
        model.decoders[r].params = {k: v.copy() for k, v in params.items()}


# ------------------------------------------------------------------ pretrain

def validation_loss(model, examples, batch_size=16) -> float:
    """Mean grammar-masked loss over held-out examples (no updates)."""
    if not examples:
        return 0.0
    by_role = {}
    for ex in examples:
        by_role.setdefault(ex.role, []).append(ex)
    losses, weights = [], []
    for role, exs in sorted(by_role.items()):
        for i in range(0, len(exs), batch_size):
            chunk = exs[i:i + batch_size]
            loss, _ = model.loss_and_grads(role, chunk)
            losses.append(loss)
            weights.append(len(chunk))
    return float(np.average(losses, weights=weights))


def pretrain(model: NeuralProposal, triplets, run_dir, epochs=50,
             batch_size=8, lr=1e-4, seed=0, val_frac=0.1, validate_every=5,
             patience=10, divergence_loss=1e3):
    """Supervised training on synthetic concepts; held-out loss validation
    with the same every-5-epochs / patience-10 / best-snapshot regime as
    fine-tuning.  Returns a report dict and leaves the best snapshot live."""
    os.makedirs(run_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    tr, va = split_concepts(triplets, val_frac, seed)
    train_ex, val_ex = [], []
    for t in tr:
        train_ex.extend(format_targets(t, rng))
    for t in va:
        val_ex.extend(format_targets(t, rng))
    pools = {"synthetic": _SourcePool(train_ex, rng)}
    optimizers = model.make_optimizers(lr=lr)
    hist_path = os.path.join(run_dir, "history.csv")
    with open(hist_path, "w", newline="") as fh:
        csv.writer(fh).writerow(["round", "epoch", "split", "value"])

    def log_row(epoch, split, value):
        with open(hist_path, "a", newline="") as fh:
            csv.writer(fh).writerow([0, epoch, split, f"{value:.6f}"])

    best_val = validation_loss(model, val_ex)
    log_row(-1, "val", best_val)
    best_snap = _snapshot(model)
    epochs_since_best = 0
    stopped = epochs
    diverged = False
    ep = 0
    while ep < epochs:
        chunk = min(validate_every, epochs - ep)
        hist, diverged = train_epochs(model, pools, optimizers, chunk,
                                      batch_size, rng, divergence_loss)
        for j, l in enumerate(hist):
            log_row(ep + j, "train", l)
        ep += chunk
        if diverged:
            stopped = ep
            break
        val = validation_loss(model, val_ex)
        log_row(ep - 1, "val", val)
        if val < best_val - 1e-12:
            best_val = val
            best_snap = _snapshot(model)
            epochs_since_best = 0
        else:
            epochs_since_best += chunk
        if epochs_since_best >= patience:
            stopped = ep
            break
    _restore(model, best_snap)
    model.save(os.path.join(run_dir, "checkpoint.bin"))
    return {"epochs_run": stopped, "best_val_loss": best_val,
            "diverged": diverged, "n_train_examples": len(train_ex),
            "n_val_examples": len(val_ex)}


# ------------------------------------------------------------------ the loop

def split_concepts(concepts, val_frac, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    order = list(rng.permutation(len(concepts)))
    n_val = max(1, int(round(val_frac * len(concepts)))) if len(concepts) > 1 else 0
    val_ix = sorted(order[:n_val])
    train_ix = sorted(order[n_val:])
    return ([concepts[i] for i in train_ix], [concepts[i] for i in val_ix])


def finetune(model: NeuralProposal, concepts, run_dir, cfg: FinetuneConfig):
    """Run the bootstrapping loop; returns a report dict.

    Resumable: completed rounds (checkpoint present) are skipped and the
    newest checkpoint is loaded before continuing.
    """
    os.makedirs(os.path.join(run_dir, "rounds"), exist_ok=True)
    hist_path = os.path.join(run_dir, "history.csv")
    if not os.path.exists(hist_path):
        with open(hist_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["round", "epoch", "split", "value"])

    train_set, val_set = split_concepts(concepts, cfg.val_frac, cfg.seed)
    spec = domains.get_domain(model.domain)
    report = {"rounds": [], "train_concepts": len(train_set),
              "val_concepts": len(val_set)}

    history_templates = set()
    history_groups = set()
    start_round = 0
    for r in range(cfg.rounds):
        ck = os.path.join(run_dir, "rounds", f"round_{r:02d}", "checkpoint.bin")
        if os.path.exists(ck):
            start_round = r + 1
    if start_round:
        ck = os.path.join(run_dir, "rounds",
                          f"round_{start_round - 1:02d}", "checkpoint.bin")
        loaded = NeuralProposal.load(ck)
        model.decoders = loaded.decoders

    def log_row(rnd, epoch, split, value):
        with open(hist_path, "a", newline="") as fh:
            csv.writer(fh).writerow([rnd, epoch, split, f"{value:.6f}"])

    for rnd in range(start_round, cfg.rounds):
        round_dir = os.path.join(run_dir, "rounds", f"round_{rnd:02d}")
        os.makedirs(round_dir, exist_ok=True)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rnd + 1]))
        round_report = {"round": rnd}

        # -- 1. infer on training concepts
        results, failures = infer_concepts(train_set, model,
                                           cfg.weights, cfg.beams)
        round_report["inference_failures"] = len(failures)

        self_triplets, executed_triplets = [], []
        for i, res in sorted(results.items()):
            t = res.triplet
            self_triplets.append(GroupTriplet(
                domain=t.domain, concept_id=t.concept_id, template=t.template,
                programs=t.programs, canvases=t.canvases, source="self"))
            exec_canvases = [spec.execute(z)[0] for z in t.programs]
            executed_triplets.append(GroupTriplet(
                domain=t.domain, concept_id=t.concept_id + "-exec",
                template=t.template, programs=t.programs,
                canvases=exec_canvases, source="executed"))
            tp_key, g_key = _group_key(t.template, t.canvases, spec)
            history_templates.add(tp_key)
            history_groups.add(g_key)

        # -- 2. dreams from a generative clone
        dream_triplets = []
        dream_stats = {"requested": 0, "accepted": 0}
        if cfg.dreams_per_round > 0 and (self_triplets or executed_triplets):
            gen = model.clone(generative=True)
            gex = []
            for t in self_triplets + executed_triplets:
                gex.extend(format_targets(t, rng))
            if gex:
                gen_opt = gen.make_optimizers(lr=cfg.lr)
                pools = {"all": _SourcePool(gex, rng)}
                train_epochs(gen, pools, gen_opt, cfg.gen_epochs,
                             cfg.batch_size, rng, cfg.divergence_loss)
                dream_triplets, dream_stats = dream_concepts(
                    gen, cfg.dreams_per_round, cfg.dream_group_size, rng,
                    history_templates, history_groups,
                    concept_prefix=f"dream-r{rnd}")
        round_report["dreams"] = dream_stats

        # -- 3. format examples, save datasets
        datasets = {"self": self_triplets, "executed": executed_triplets,
                    "dreamed": dream_triplets}
        pools = {}
        for name, triplets in datasets.items():
            save_triplets(os.path.join(round_dir, f"{name}.jsonl"), triplets)
            exs = []
            for t in triplets:
                exs.extend(format_targets(t, rng))
            round_report[f"n_{name}"] = len(exs)
            if exs:
                pools[name] = _SourcePool(exs, rng)
        if not pools:
            round_report["skipped"] = "no training data"
            report["rounds"].append(round_report)
            model.save(os.path.join(round_dir, "checkpoint.bin"))
            continue

        # -- 4. train with validation / patience / best-snapshot
        val0 = validation_objective(model, val_set, cfg.weights, cfg.beams)
        log_row(rnd, -1, "val", val0)
        round_report["val_before"] = val0
        best_val = val0
        best_snap = _snapshot(model)
        epochs_since_best = 0
        stopped = cfg.epochs
        optimizers = model.make_optimizers(lr=cfg.lr)
        diverged = False

        ep = 0
        while ep < cfg.epochs:
            chunk = min(cfg.validate_every, cfg.epochs - ep)
            hist, diverged = train_epochs(
                model, pools, optimizers, chunk, cfg.batch_size, rng,
                cfg.divergence_loss)
            for j, l in enumerate(hist):
                log_row(rnd, ep + j, "train", l)
            ep += chunk
            if diverged:
                stopped = ep
                round_report["diverged"] = True
                break
            val = validation_objective(model, val_set, cfg.weights, cfg.beams)
            log_row(rnd, ep - 1, "val", val)
            if val < best_val - 1e-12:
                best_val = val
                best_snap = _snapshot(model)
                epochs_since_best = 0
            else:
                epochs_since_best += chunk
            if epochs_since_best >= cfg.patience:
                stopped = ep
                break
        _restore(model, best_snap)
        round_report["val_best"] = best_val
        round_report["stopped_epoch"] = stopped
        model.save(os.path.join(round_dir, "checkpoint.bin"))
        with open(os.path.join(round_dir, "report.json"), "w") as fh:
            json.dump(round_report, fh, indent=2, sort_keys=True)
        report["rounds"].append(round_report)

    report["final_val"] = validation_objective(model, val_set, cfg.weights,
                                               cfg.beams) if val_set else None
    return report
