"""Small autoregressive attention decoder in pure numpy (float64).

One :class:`Decoder` handles one decoding role.  Its input is a row
sequence made of three segments:

    [visual rows | prompt token rows | BOS + target token rows]

Visual rows are patch-feature vectors through a trainable affine lift; the
two token segments use a learned token table.  All rows add learned
absolute-position and segment embeddings.  Attention is bidirectional
inside the conditioning prefix (visual + prompt rows) and causal over the
target stream; padding rows are never attended.

Training uses a grammar-masked cross entropy: at every target position the
softmax runs over that position's admissible token set only, so forced
tokens (singleton sets) contribute exactly zero loss.  Backpropagation is
hand-written and float64 throughout, which keeps finite-difference
gradient checks honest and runs deterministic.

Checkpoints are a single deterministic binary file: a JSON meta line plus
raw little-endian tensors (no archive timestamps, identical bytes for
identical state).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

NEG = -1e30  # additive mask value; large but finite to keep float64 exact


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    heads: int = 4
    layers: int = 2
    mlp_mult: int = 4

    @property
    def head_dim(self) -> int:
        assert self.width % self.heads == 0
        return self.width // self.heads


def small_config() -> ModelConfig:
    return ModelConfig(width=64, heads=4, layers=2)


def full_config() -> ModelConfig:
    return ModelConfig(width=256, heads=16, layers=8)


# ------------------------------------------------------------------ primitives

def _ln_forward(x, g, b, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)

def _ln_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean1 = dxhat.mean(-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def _softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


class Decoder:
    """One role decoder over a fixed token table and feature dimension."""

    def __init__(self, cfg: ModelConfig, n_tokens: int, feat_dim: int,
                 max_rows: int, rng: np.random.Generator = None,
                 params: dict = None):
        self.cfg = cfg
        self.n_tokens = n_tokens
        self.feat_dim = feat_dim
        self.max_rows = max_rows
        if params is not None:
            self.params = params
        else:
            assert rng is not None
            self.params = self._init(rng)

    def _init(self, rng) -> dict:
        c = self.cfg
        W, V, F = c.width, self.n_tokens, self.feat_dim

        # weight matrices use fan-in scaling so every linear map has unit
        # gain; a flat small std would give the multi-matrix attention path
        # (value -> output -> head) a gain orders of magnitude below the
        # one-matrix residual path of the row's own token, and the decoder
        # would settle on token marginals long before conditioning ever
        # influenced the logits
        def mat(fan_in, fan_out):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

        def emb(*shape):
            return rng.normal(0.0, 0.02, size=shape)

        p = {
            "tok": emb(V, W),
            "pos": emb(self.max_rows, W),
            "seg": emb(3, W),
            "vis_w": mat(F, W),
            "vis_b": np.zeros(W),
            "out_w": mat(W, V),
            "out_b": np.zeros(V),
        }
        for l in range(c.layers):
            p[f"l{l}.ln1.g"] = np.ones(W)
            p[f"l{l}.ln1.b"] = np.zeros(W)
            p[f"l{l}.wq"] = mat(W, W)
            p[f"l{l}.bq"] = np.zeros(W)
            p[f"l{l}.wk"] = mat(W, W)
            p[f"l{l}.bk"] = np.zeros(W)
            p[f"l{l}.wv"] = mat(W, W)
            p[f"l{l}.bv"] = np.zeros(W)
            p[f"l{l}.wo"] = mat(W, W)
            p[f"l{l}.bo"] = np.zeros(W)
            p[f"l{l}.ln2.g"] = np.ones(W)
            p[f"l{l}.ln2.b"] = np.zeros(W)
            p[f"l{l}.w1"] = mat(W, c.mlp_mult * W)
            p[f"l{l}.b1"] = np.zeros(c.mlp_mult * W)
            p[f"l{l}.w2"] = mat(c.mlp_mult * W, W)
            p[f"l{l}.b2"] = np.zeros(W)
        p["lnf.g"] = np.ones(W)
        p["lnf.b"] = np.zeros(W)
        return p

    def copy(self) -> "Decoder":
        return Decoder(self.cfg, self.n_tokens, self.feat_dim, self.max_rows,
                       params={k: v.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------------ packing

    def pack(self, start_id, vis_feats_list, prompts, targets,
             legal_sets_list):
        """Build the padded training batch.

        vis_feats_list[b]: (n_vis, 16, F); prompts[b]/targets[b]: token id
        tuples; legal_sets_list[b]: per-target-position admissible id tuples.
        """
        B = len(targets)
        lens, pres = [], []
        for vf, pr, tg in zip(vis_feats_list, prompts, targets):
            nv = vf.shape[0] * vf.shape[1]
            pres.append(nv + len(pr))
            lens.append(nv + len(pr) + len(tg))  # BOS + target[:-1] rows
        T = max(lens)
        if T > self.max_rows:
            raise ValueError(f"batch needs {T} rows, table has {self.max_rows}")
        V, F = self.n_tokens, self.feat_dim
        tok = np.zeros((B, T), dtype=np.int64)
        visf = np.zeros((B, T, F))
        isvis = np.zeros((B, T), dtype=bool)
        istok = np.zeros((B, T), dtype=bool)
        seg = np.zeros((B, T), dtype=np.int64)
        notpad = np.zeros((B, T), dtype=bool)
        pred = np.zeros((B, T), dtype=bool)
        label = np.zeros((B, T), dtype=np.int64)
        legal = np.zeros((B, T, V), dtype=bool)
        for b, (vf, pr, tg, ls) in enumerate(
                zip(vis_feats_list, prompts, targets, legal_sets_list)):
            nv = vf.shape[0] * vf.shape[1]
            visf[b, :nv] = vf.reshape(nv, F)
            isvis[b, :nv] = True
            seg[b, :nv] = 0
            i = nv
            for t in pr:
                tok[b, i] = t
                istok[b, i] = True
                seg[b, i] = 1
                i += 1
            stream = (start_id,) + tuple(tg[:-1])
            for j, t in enumerate(stream):
                tok[b, i] = t
                istok[b, i] = True
                seg[b, i] = 2
                pred[b, i] = True
                label[b, i] = tg[j]
                for a in ls[j]:
                    legal[b, i, a] = True
                i += 1
            notpad[b, :i] = True
        pos = np.broadcast_to(np.arange(T), (B, T)).copy()
        # additive attention mask: row i may attend j if j is not padding and
        # (j inside the conditioning prefix or j <= i)
        idx = np.arange(T)
        causal = idx[None, :] <= idx[:, None]                    # (Ti, Tj)
        in_prefix = idx[None, None, :] < np.asarray(pres)[:, None, None]
        allow = (causal[None, :, :] | in_prefix) & notpad[:, None, :]
        mask = np.where(allow, 0.0, NEG)[:, None, :, :]
        return {
            "tok": tok, "visf": visf, "isvis": isvis, "istok": istok,
            "seg": seg, "pos": pos, "mask": mask, "pred": pred,
            "label": label, "legal": legal, "notpad": notpad,
        }

    # ------------------------------------------------------------------ forward

    def _embed(self, batch):
        p = self.params
        X = p["tok"][batch["tok"]] * batch["istok"][:, :, None]
        # visual rows are normalized so their scale matches token embeddings
        # from the first step; without this the lift starts ~10x weaker and
        # visual attention learns too slowly to beat early stopping
        A = batch["visf"] @ p["vis_w"] + p["vis_b"]
        An, vcache = _ln_forward(A, 1.0, 0.0)
        X = X + An * batch["isvis"][:, :, None]
        X = X + p["pos"][batch["pos"]] + p["seg"][batch["seg"]]
        return X, vcache

    def _blocks_forward(self, X, mask):
        c = self.cfg
        p = self.params
        H, dk = c.heads, c.head_dim
        caches = []
        for l in range(c.layers):
            a, ln1c = _ln_forward(X, p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
            q = a @ p[f"l{l}.wq"] + p[f"l{l}.bq"]
            k = a @ p[f"l{l}.wk"] + p[f"l{l}.bk"]
            v = a @ p[f"l{l}.wv"] + p[f"l{l}.bv"]
            B, T, W = a.shape
            qh = q.reshape(B, T, H, dk).transpose(0, 2, 1, 3)
            kh = k.reshape(B, T, H, dk).transpose(0, 2, 1, 3)
            vh = v.reshape(B, T, H, dk).transpose(0, 2, 1, 3)
            S = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dk) + mask
            P = _softmax(S)
            O = P @ vh
            o = O.transpose(0, 2, 1, 3).reshape(B, T, W)
            attn = o @ p[f"l{l}.wo"] + p[f"l{l}.bo"]
            X1 = X + attn
            a2, ln2c = _ln_forward(X1, p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
            h = a2 @ p[f"l{l}.w1"] + p[f"l{l}.b1"]
            r = np.maximum(h, 0.0)
            m = r @ p[f"l{l}.w2"] + p[f"l{l}.b2"]
            X2 = X1 + m
            caches.append((a, ln1c, qh, kh, vh, P, o, X, a2, ln2c, r, h > 0))
            X = X2
        Xf, lnfc = _ln_forward(X, p["lnf.g"], p["lnf.b"])
        return Xf, (caches, lnfc)

    def forward_loss(self, batch):
        """Mean grammar-masked cross entropy and parameter gradients."""
        p = self.params
        X, vcache = self._embed(batch)
        Xf, (caches, lnfc) = self._blocks_forward(X, batch["mask"])
        logits = Xf @ p["out_w"] + p["out_b"]
        pred = batch["pred"]
        n_pred = int(pred.sum())
        masked = np.where(batch["legal"], logits, NEG)
        prob = _softmax(masked)
        B, T, V = logits.shape
        gold = np.zeros((B, T, V))
        bb, tt = np.nonzero(pred)
        gold[bb, tt, batch["label"][bb, tt]] = 1.0
        eps = 1e-300
        loss = -(np.log(prob[bb, tt, batch["label"][bb, tt]] + eps)).sum() / n_pred
        dlogits = np.where(batch["legal"], prob, 0.0) - gold
        dlogits *= pred[:, :, None] / n_pred

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        grads["out_w"] = np.einsum("btw,btv->wv", Xf, dlogits)
        grads["out_b"] = dlogits.sum((0, 1))
        dXf = dlogits @ p["out_w"].T
        dX, dg, db = _ln_backward(dXf, lnfc)
        grads["lnf.g"] += dg
        grads["lnf.b"] += db
        dX = self._blocks_backward(dX, caches, batch["mask"], grads)
        self._embed_backward(dX, batch, grads, vcache)
        return float(loss), grads

    def _blocks_backward(self, dX, caches, mask, grads):
        c = self.cfg
        p = self.params
        H, dk = c.heads, c.head_dim
        for l in reversed(range(c.layers)):
            a, ln1c, qh, kh, vh, P, o, Xin, a2, ln2c, r, relu_mask = caches[l]
            B, T, W = a.shape
            # mlp branch
            dm = dX
            grads[f"l{l}.w2"] += np.einsum("bth,btw->hw", r, dm)
            grads[f"l{l}.b2"] += dm.sum((0, 1))
            dr = dm @ p[f"l{l}.w2"].T
            dh = dr * relu_mask
            grads[f"l{l}.w1"] += np.einsum("btw,bth->wh", a2, dh)
            grads[f"l{l}.b1"] += dh.sum((0, 1))
            da2 = dh @ p[f"l{l}.w1"].T
            dX1, dg, db = _ln_backward(da2, ln2c)
            grads[f"l{l}.ln2.g"] += dg
            grads[f"l{l}.ln2.b"] += db
            dX1 = dX1 + dX  # residual
            # attention branch
            dattn = dX1
            grads[f"l{l}.wo"] += np.einsum("btw,btv->wv", o, dattn)
            grads[f"l{l}.bo"] += dattn.sum((0, 1))
            do = dattn @ p[f"l{l}.wo"].T
            dO = do.reshape(B, T, H, dk).transpose(0, 2, 1, 3)
            dP = dO @ vh.transpose(0, 1, 3, 2)
            dvh = P.transpose(0, 1, 3, 2) @ dO
            dS = P * (dP - (dP * P).sum(-1, keepdims=True))
            dqh = dS @ kh / np.sqrt(dk)
            dkh = dS.transpose(0, 1, 3, 2) @ qh / np.sqrt(dk)
            dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, W)
            dk_ = dkh.transpose(0, 2, 1, 3).reshape(B, T, W)
            dv = dvh.transpose(0, 2, 1, 3).reshape(B, T, W)
            grads[f"l{l}.wq"] += np.einsum("btw,btv->wv", a, dq)
            grads[f"l{l}.bq"] += dq.sum((0, 1))
            grads[f"l{l}.wk"] += np.einsum("btw,btv->wv", a, dk_)
            grads[f"l{l}.bk"] += dk_.sum((0, 1))
            grads[f"l{l}.wv"] += np.einsum("btw,btv->wv", a, dv)
            grads[f"l{l}.bv"] += dv.sum((0, 1))
            da = dq @ p[f"l{l}.wq"].T + dk_ @ p[f"l{l}.wk"].T + dv @ p[f"l{l}.wv"].T
            dXin, dg, db = _ln_backward(da, ln1c)
            grads[f"l{l}.ln1.g"] += dg
            grads[f"l{l}.ln1.b"] += db
            dX = dX1 + dXin  # residual into the block input
        return dX

    def _embed_backward(self, dX, batch, grads, vcache):
        istok = batch["istok"]
        isvis = batch["isvis"]
        dtokrows = dX * istok[:, :, None]
        np.add.at(grads["tok"], batch["tok"][istok], dtokrows[istok])
        dAn = dX * isvis[:, :, None]
        dA, _, _ = _ln_backward(dAn, vcache)  # param-free LN: g/b are constants
        grads["vis_w"] += np.einsum("btf,btw->fw", batch["visf"], dA)
        grads["vis_b"] += dA.sum((0, 1))
        np.add.at(grads["pos"], batch["pos"].reshape(-1),
                  dX.reshape(-1, dX.shape[-1]))
        np.add.at(grads["seg"], batch["seg"].reshape(-1),
                  dX.reshape(-1, dX.shape[-1]))

    # ---------------------------------------------------------------- decoding

    def open_session(self, start_id, vis_feats, prompt_tokens):
        """Precompute the conditioning prefix once; returns a Session."""
        return Session(self, start_id, vis_feats, tuple(prompt_tokens))


class Session:
    """Next-token logits for growing target prefixes over a fixed prefix.

    The conditioning prefix (visual + prompt rows, bidirectional attention)
    is forwarded once and its per-layer keys/values cached; each ``logits``
    call forwards only the BOS+target rows causally over that cache.
    """

    def __init__(self, dec: Decoder, start_id, vis_feats, prompt_tokens):
        self.dec = dec
        self.start_id = start_id
        p = dec.params
        nv = 0
        rows = []
        if vis_feats is not None and len(vis_feats):
            vf = np.asarray(vis_feats)
            nv = vf.shape[0] * vf.shape[1]
            A = vf.reshape(nv, dec.feat_dim) @ p["vis_w"] + p["vis_b"]
            rows.append(_ln_forward(A, 1.0, 0.0)[0])
        if prompt_tokens:
            rows.append(p["tok"][list(prompt_tokens)])
        X = (np.concatenate(rows, axis=0) if rows
             else np.zeros((0, dec.cfg.width)))
        P = X.shape[0]
        if P:
            X = X + p["pos"][:P]
            segids = np.array([0] * nv + [1] * (P - nv))
            X = X + p["seg"][segids]
        self.prefix_len = P
        self.kcache, self.vcache, self.prefix_out = self._prefix_forward(X)

    def _prefix_forward(self, X):
        dec = self.dec
        c, p = dec.cfg, dec.params
        H, dk = c.heads, c.head_dim
        P = X.shape[0]
        ks, vs = [], []
        for l in range(c.layers):
            a, _ = _ln_forward(X[None], p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
            a = a[0]
            q = a @ p[f"l{l}.wq"] + p[f"l{l}.bq"]
            k = a @ p[f"l{l}.wk"] + p[f"l{l}.bk"]
            v = a @ p[f"l{l}.wv"] + p[f"l{l}.bv"]
            ks.append(k.reshape(P, H, dk))
            vs.append(v.reshape(P, H, dk))
            if P:
                qh = q.reshape(P, H, dk).transpose(1, 0, 2)
                kh = ks[-1].transpose(1, 0, 2)
                vh = vs[-1].transpose(1, 0, 2)
                S = qh @ kh.transpose(0, 2, 1) / np.sqrt(dk)
                A = _softmax(S) @ vh
                o = A.transpose(1, 0, 2).reshape(P, c.width)
                X = X + o @ p[f"l{l}.wo"] + p[f"l{l}.bo"]
            a2, _ = _ln_forward(X[None], p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
            a2 = a2[0]
            X = X + np.maximum(a2 @ p[f"l{l}.w1"] + p[f"l{l}.b1"], 0.0) @ p[f"l{l}.w2"] + p[f"l{l}.b2"]
        return ks, vs, X

    def logits(self, target_prefix) -> np.ndarray:
        """Logits over the token table for the next position after
        BOS + the given target prefix."""
        dec = self.dec
        c, p = dec.cfg, dec.params
        H, dk = c.heads, c.head_dim
        toks = (self.start_id,) + tuple(target_prefix)
        t = len(toks)
        P = self.prefix_len
        if P + t > dec.max_rows:
            raise ValueError("target stream exceeds the position table")
        X = p["tok"][list(toks)] + p["pos"][P:P + t] + p["seg"][2]
        causal = np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, NEG)
        for l in range(c.layers):
            a, _ = _ln_forward(X[None], p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
            a = a[0]
            q = (a @ p[f"l{l}.wq"] + p[f"l{l}.bq"]).reshape(t, H, dk).transpose(1, 0, 2)
            k = (a @ p[f"l{l}.wk"] + p[f"l{l}.bk"]).reshape(t, H, dk).transpose(1, 0, 2)
            v = (a @ p[f"l{l}.wv"] + p[f"l{l}.bv"]).reshape(t, H, dk).transpose(1, 0, 2)
            kp = self.kcache[l].transpose(1, 0, 2)
            vp = self.vcache[l].transpose(1, 0, 2)
            kall = np.concatenate([kp, k], axis=1)
            vall = np.concatenate([vp, v], axis=1)
            S = q @ kall.transpose(0, 2, 1) / np.sqrt(dk)
            S[:, :, P:] += causal
            A = _softmax(S) @ vall
            o = A.transpose(1, 0, 2).reshape(t, c.width)
            X = X + o @ p[f"l{l}.wo"] + p[f"l{l}.bo"]
            a2, _ = _ln_forward(X[None], p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
            a2 = a2[0]
            X = X + np.maximum(a2 @ p[f"l{l}.w1"] + p[f"l{l}.b1"], 0.0) @ p[f"l{l}.w2"] + p[f"l{l}.b2"]
        xf, _ = _ln_forward(X[-1:][None], p["lnf.g"], p["lnf.b"])
        return (xf[0, 0] @ p["out_w"] + p["out_b"])


# -------------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * (g * g)
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array([self.t], dtype=np.int64)}
        for k, v in self.m.items():
            out[f"m.{k}"] = v
        for k, v in self.v.items():
            out[f"v.{k}"] = v
        return out

    def load_state(self, state: dict):
        self.t = int(state["t"][0])
        for k in self.m:
            self.m[k] = state[f"m.{k}"]
            self.v[k] = state[f"v.{k}"]


# ------------------------------------------------------------------ checkpoints

_MAGIC = b"TNSR1\n"


def save_tensors(path, tensors: dict, meta: dict) -> None:
    """Deterministic single-file checkpoint: magic, meta JSON, raw tensors."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write((json.dumps(meta, sort_keys=True) + "\n").encode("utf-8"))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            head = {"name": name, "dtype": str(arr.dtype),
                    "shape": list(arr.shape)}
            fh.write((json.dumps(head, sort_keys=True) + "\n").encode("utf-8"))
            fh.write(arr.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(_MAGIC)
    nl = blob.index(b"\n", off)
    meta = json.loads(blob[off:nl].decode("utf-8"))
    off = nl + 1
    tensors = {}
    while off < len(blob):
        nl = blob.index(b"\n", off)
        head = json.loads(blob[off:nl].decode("utf-8"))
        off = nl + 1
        arr = np.frombuffer(blob, dtype=np.dtype(head["dtype"]), offset=off,
                            count=int(np.prod(head["shape"])) if head["shape"] else 1)
        n = arr.nbytes
        if head["shape"]:
            arr = arr.reshape(head["shape"])
        else:
            arr = arr.reshape(())
        tensors[head["name"]] = arr.copy()
        off += n
    return tensors, meta
