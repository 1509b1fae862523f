"""Proposal models: next-token distributions over grammar-legal sets.

A proposal model answers one question for the search and the dream
sampler: given a decoding role, visual conditioning, and a program-side
prompt, what is the distribution over admissible next tokens?  Two
implementations share that interface:

* :class:`GrammarPrior` — no parameters; probabilities assigned by slot
  type (function weights, hole chance, pin/share/free split, uniform
  values), renormalized over whatever the cursor admits.
* :class:`NeuralProposal` — three role decoders (template / expansion /
  param) over a shared frozen patch featurizer.  Supports two conditioning
  variants: ``pooled`` mean-pools the group's patch features for the
  template role (few-shot generation), ``generative`` zeroes all visual
  features so the same decoders act as an unconditional program sampler.

Sessions expose ``dist(prefix, cursor) -> (legal_ids, probs)`` with probs
summing to one over the admissible set.  The caller owns the cursor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import domains
from .cursors import (ExpansionCursor, ParamCursor, TemplateCursor,
                      legal_sets_along)
from .encoder import TOKENS_PER_CANVAS, feature_dim, group_features
from .neural import Adam, Decoder, ModelConfig, load_tensors, save_tensors
from .sequences import parse
from .vocab import (K_HOLE, K_SENTINEL, K_SHARED, K_VALUE, MAX_HOLES,
                    Vocabulary)

ROLES = ("template", "expansion", "param")


def max_rows_for(vocab: Vocabulary, g_max: int) -> dict:
    """Position-table sizes per role, derived from the sequence caps."""
    t = vocab.caps.template
    f = vocab.caps.fill
    return {
        "template": TOKENS_PER_CANVAS * g_max + t,
        "expansion": TOKENS_PER_CANVAS + t + MAX_HOLES * (1 + f) + 1,
        "param": TOKENS_PER_CANVAS + t + MAX_HOLES * f + vocab.caps.param,
    }


# ------------------------------------------------------------------ the prior

@dataclass(frozen=True)
class PriorConfig:
    hole_prob: float = 0.25
    pin_prob: float = 0.35
    share_prob: float = 0.20
    fn_weights: dict = None  # category -> {fn: weight}


class _PriorSession:
    def __init__(self, prior):
        self.prior = prior

    def dist(self, prefix, cursor):
        return self.prior._dist(cursor)


class GrammarPrior:
    """Parameter-free proposal assigning probabilities by slot type."""

    trainable = False

    def __init__(self, domain: str, config: PriorConfig = None):
        self.domain = domain
        self.vocab = domains.get_vocab(domain)
        self.config = config or PriorConfig()

    def open(self, role, canvases, cond_tokens):
        return _PriorSession(self)

    def _dist(self, cursor):
        legal = cursor.legal()
        if not legal:
            raise RuntimeError("cursor admits no token (dead end)")
        v = self.vocab
        cfg = self.config
        kind = cursor.slot_kind()
        w = np.zeros(len(legal))
        if kind[0] in ("node", "fill"):
            cat = kind[1]
            table = (cfg.fn_weights or {}).get(cat, {})
            hole_ids = [i for i, t in enumerate(legal)
                        if v.token(t)[0] == K_HOLE]
            fn_ids = [i for i in range(len(legal)) if i not in hole_ids]
            hp = cfg.hole_prob if (hole_ids and fn_ids) else (
                1.0 if hole_ids else 0.0)
            for i in hole_ids:
                w[i] = hp / len(hole_ids)
            if fn_ids:
                raw = np.array([float(table.get(v.token(legal[i])[1], 1.0))
                                for i in fn_ids])
                raw = raw / raw.sum() * (1.0 - hp)
                for i, x in zip(fn_ids, raw):
                    w[i] = x
        elif kind[0] == "pslot":
            vals = [i for i, t in enumerate(legal) if v.token(t)[0] == K_VALUE]
            shared = [i for i, t in enumerate(legal) if v.token(t)[0] == K_SHARED]
            sent = [i for i, t in enumerate(legal) if v.token(t)[0] == K_SENTINEL]
            p_pin = cfg.pin_prob if vals else 0.0
            p_share = cfg.share_prob if shared else 0.0
            p_free = (1.0 - cfg.pin_prob - cfg.share_prob) if sent else 0.0
            z = p_pin + p_share + p_free
            if z <= 0:  # degenerate: uniform over whatever is admissible
                w[:] = 1.0 / len(legal)
            else:
                for i in vals:
                    w[i] = p_pin / z / len(vals)
                for i in shared:
                    w[i] = p_share / z / len(shared)
                for i in sent:
                    w[i] = p_free / z / len(sent)
        else:  # forced prompts, value bindings, end-of-stream
            w[:] = 1.0 / len(legal)
        return legal, w


# ------------------------------------------------------------- neural proposal

class _NeuralSession:
    def __init__(self, sess, vocab):
        self.sess = sess
        self.vocab = vocab

    def dist(self, prefix, cursor):
        legal = cursor.legal()
        if not legal:
            raise RuntimeError("cursor admits no token (dead end)")
        logits = self.sess.logits(prefix)
        sub = np.asarray([logits[t] for t in legal])
        sub -= sub.max()
        e = np.exp(sub)
        return legal, e / e.sum()


class NeuralProposal:
    """Three role decoders over the shared patch featurizer."""

    trainable = True

    def __init__(self, domain: str, config: ModelConfig = None, g_max: int = 5,
                 seed: int = 0, pooled: bool = False, generative: bool = False,
                 decoders: dict = None):
        spec = domains.get_domain(domain)
        self.domain = domain
        self.vocab = domains.get_vocab(domain)
        self.spec = spec
        self.config = config or ModelConfig()
        self.g_max = g_max
        self.pooled = pooled
        self.generative = generative
        self.feat_dim = feature_dim(spec.palette_size)
        rows = max_rows_for(self.vocab, g_max)
        if decoders is not None:
            self.decoders = decoders
        else:
            rng = np.random.default_rng(seed)
            self.decoders = {
                role: Decoder(self.config, self.vocab.n_tokens, self.feat_dim,
                              rows[role], rng=rng)
                for role in ROLES
            }

    # -------------------------------------------------------------- variants

    def clone(self, pooled=None, generative=None) -> "NeuralProposal":
        return NeuralProposal(
            self.domain, self.config, self.g_max, pooled=self.pooled
            if pooled is None else pooled,
            generative=self.generative if generative is None else generative,
            decoders={r: d.copy() for r, d in self.decoders.items()})

    # ---------------------------------------------------------- conditioning

    def _features(self, role, canvases):
        if canvases:
            feats = group_features(canvases, self.spec.palette_size)
        else:
            feats = np.zeros((1, TOKENS_PER_CANVAS, self.feat_dim))
        if self.generative:
            feats = np.zeros((1, TOKENS_PER_CANVAS, self.feat_dim))
        elif role == "template" and self.pooled:
            feats = feats.mean(axis=0, keepdims=True)
        if role == "template" and feats.shape[0] > self.g_max:
            raise ValueError(
                f"group of {feats.shape[0]} exceeds the model's g_max={self.g_max}")
        return feats

    def open(self, role, canvases, cond_tokens):
        feats = self._features(role, list(canvases) if canvases else [])
        sess = self.decoders[role].open_session(
            self.vocab.start_id, feats, tuple(cond_tokens))
        return _NeuralSession(sess, self.vocab)

    # ------------------------------------------------------------- training

    def _cursor_for(self, role, prefix):
        ctx = self.spec.context_factory()
        if role == "template":
            return TemplateCursor(self.vocab, ctx)
        if role == "expansion":
            return ExpansionCursor(self.vocab, parse(prefix, self.vocab), ctx)
        return ParamCursor(self.vocab, parse(prefix, self.vocab), ctx)

    def batch_for(self, role, examples):
        """Pack one role's training examples into a decoder batch."""
        feats, prompts, targets, legals = [], [], [], []
        for ex in examples:
            assert ex.role == role
            f = self._features(role, list(ex.visuals))
            feats.append(f)
            prompts.append(tuple(ex.prefix))
            targets.append(tuple(ex.target))
            cur = self._cursor_for(role, ex.prefix)
            legals.append(legal_sets_along(cur, ex.target))
        return self.decoders[role].pack(self.vocab.start_id, feats, prompts,
                                        targets, legals)

    def loss_and_grads(self, role, examples):
        return self.decoders[role].forward_loss(self.batch_for(role, examples))

    def make_optimizers(self, lr=1e-4) -> dict:
        return {role: Adam(self.decoders[role].params, lr=lr)
                for role in ROLES}

    def train_step(self, examples, optimizers) -> dict:
        """One optimizer step per role present in the minibatch."""
        losses = {}
        by_role = {}
        for ex in examples:
            by_role.setdefault(ex.role, []).append(ex)
        for role, exs in sorted(by_role.items()):
            loss, grads = self.loss_and_grads(role, exs)
            optimizers[role].step(self.decoders[role].params, grads)
            losses[role] = loss
        return losses

    # ----------------------------------------------------------- checkpoints

    def save(self, path):
        tensors = {}
        for role, dec in self.decoders.items():
            for k, v in dec.params.items():
                tensors[f"{role}.{k}"] = v
        meta = {
            "format": 1,
            "kind": "proposal",
            "domain": self.domain,
            "config": {"width": self.config.width, "heads": self.config.heads,
                       "layers": self.config.layers,
                       "mlp_mult": self.config.mlp_mult},
            "g_max": self.g_max,
            "pooled": self.pooled,
            "generative": self.generative,
        }
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "NeuralProposal":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != "proposal":
            raise ValueError(f"{path}: not a proposal checkpoint")
        cfg = ModelConfig(**meta["config"])
        domain = meta["domain"]
        vocab = domains.get_vocab(domain)
        spec = domains.get_domain(domain)
        rows = max_rows_for(vocab, meta["g_max"])
        decoders = {}
        for role in ROLES:
            params = {k[len(role) + 1:]: v.copy() for k, v in tensors.items()
                      if k.startswith(role + ".")}
            decoders[role] = Decoder(cfg, vocab.n_tokens,
                                     feature_dim(spec.palette_size),
                                     rows[role], params=params)
        return cls(domain, cfg, meta["g_max"], pooled=meta["pooled"],
                   generative=meta["generative"], decoders=decoders)


# ------------------------------------------------------------ stream sampling

def sample_stream(model, role, canvases, cond_tokens, cursor, rng,
                  max_steps=512):
    """Ancestral sampling of one stream; returns (tokens, logprob).

    The cursor is advanced in place; read results off it afterwards.
    """
    sess = model.open(role, canvases, cond_tokens)
    toks = []
    lp = 0.0
    for _ in range(max_steps):
        if cursor.done():
            return tuple(toks), lp
        legal, probs = sess.dist(tuple(toks), cursor)
        i = int(rng.choice(len(legal), p=probs))
        lp += float(np.log(probs[i]))
        cursor.advance(legal[i])
        toks.append(legal[i])
    raise RuntimeError("sampling exceeded the step limit")
