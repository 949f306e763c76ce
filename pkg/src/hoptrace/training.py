"""Loss, optimizer, training loop, evaluation, and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .encoder import RelationEncodingCache, Vocabulary, split_tokens
from .errors import DataError, NumericError
from .model import ModelParams, forward, forward_batch, rank_answers

log = logging.getLogger("hoptrace")

AUX_WEIGHT = 0.01
CKPT_MAGIC = b"HOPCKPT1"


def build_target(answers, n: int) -> np.ndarray:
    """Indicator vector over entities; the answer set must be non-empty."""
    ids = sorted(int(a) for a in answers)
    if not ids:
        raise DataError("empty answer set")
    if ids[0] < 0 or ids[-1] >= n:
        raise DataError(f"answer id out of range [0, {n}): {ids}")
    y = np.zeros(n)
    y[ids] = 1.0
    return y


def euclid_distance(pred: Tensor, target: np.ndarray) -> Tensor:
    """||pred - target||_2 with gradient (pred - target)/norm, taken as 0 at
    the (non-differentiable) zero-distance point."""
    diff = pred.data - target
    norm = float(np.sqrt(np.dot(diff, diff)))

    def vjp(g):
        if norm == 0.0:
            return (np.zeros_like(diff),)
        return (g * diff / norm,)

    return ad.node(norm, (pred,), vjp)


class LossBreakdown(NamedTuple):
    main: Tensor
    aux_hop: Tensor | None
    total: Tensor


def compute_loss(final: Tensor, y: np.ndarray, c: Tensor, gold_hop=None, use_aux=True) -> LossBreakdown:
    """Euclidean distance to the target plus 0.01 x hop cross-entropy when a
    gold hop count is supplied."""
    if not np.all(np.isfinite(final.data)):
        raise NumericError("non-finite entity scores reached the loss")
    if not np.all(np.isfinite(c.data)):
        raise NumericError("non-finite hop distribution reached the loss")
    main = euclid_distance(final, y)
    aux = None
    total = main
    if use_aux and gold_hop is not None:
        if not 1 <= gold_hop <= c.data.shape[0]:
            raise DataError(f"gold hop {gold_hop} outside [1, {c.data.shape[0]}]")
        aux = -ad.log(c[gold_hop - 1])
        total = main + AUX_WEIGHT * aux
    return LossBreakdown(main=main, aux_hop=aux, total=total)


class RAdam:
    """Rectified adaptive-moment updates.

    Falls back to an unadapted (momentum-only) step while the variance
    rectification term rho_t is at or below the threshold 4, then switches
    to the variance-normalized step with the rectification factor.
    """

    RHO_THRESHOLD = 4.0

    def __init__(self, params: dict[str, Tensor], lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.rho_inf = 2.0 / (1.0 - self.beta2) - 1.0

    def describe(self) -> dict:
        return {
            "name": "radam",
            "lr": self.lr,
            "betas": [self.beta1, self.beta2],
            "eps": self.eps,
            "rho_threshold": self.RHO_THRESHOLD,
        }

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        t = self.t
        b1t, b2t = self.beta1**t, self.beta2**t
        rho = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho > self.RHO_THRESHOLD:
            r = np.sqrt(
                ((rho - 4.0) * (rho - 2.0) * self.rho_inf)
                / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho)
            )
        else:
            r = None
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - b1t)
            if r is None:
                p.data -= self.lr * m_hat
            else:
                v_hat = np.sqrt(v / (1.0 - b2t))
                p.data -= self.lr * r * m_hat / (v_hat + self.eps)


# ---------------------------------------------------------------------------
# example preparation


class PreparedExample(NamedTuple):
    uid: str  # question string, used in diagnostics
    tokens: np.ndarray
    topic: int
    answers: frozenset
    gold_hop: int | None


def build_vocabulary(examples, g) -> Vocabulary:
    """Token vocabulary over the training questions plus the graph's
    relation texts (deterministic given their order)."""
    vocab = Vocabulary()
    for ex in examples:
        for tok in split_tokens(ex.clean_text):
            vocab.add(tok)
    for text in g.texts:
        vocab.add_text(text)
    return vocab


def prepare_examples(examples, vocab: Vocabulary) -> list[PreparedExample]:
    out = []
    for ex in examples:
        out.append(
            PreparedExample(
                uid=ex.question,
                tokens=vocab.encode(ex.clean_text),
                topic=ex.topic_id,
                answers=frozenset(ex.answer_ids),
                gold_hop=ex.hop,
            )
        )
    return out


# ---------------------------------------------------------------------------
# evaluation


def evaluate(g, params: ModelParams, prepared, cfg, cache=None, chunk=256) -> dict:
    """hits@1 per hop and overall, plus the mean main loss."""
    if g.form != "label" and cache is None:
        raise ValueError("text/mixed evaluation needs a relation encoding cache")
    hits: dict[int | None, list[int]] = {}
    losses = []
    with no_grad():
        for lo in range(0, len(prepared), chunk):
            group = prepared[lo : lo + chunk]
            results = forward_batch(
                g,
                [ex.tokens for ex in group],
                [ex.topic for ex in group],
                params,
                cfg,
                cache=cache,
            )
            for ex, res in zip(group, results):
                ranked, degenerate = rank_answers(res.final.data)
                ok = (not degenerate) and int(ranked[0]) in ex.answers
                hits.setdefault(ex.gold_hop, []).append(int(ok))
                y = build_target(ex.answers, g.n)
                losses.append(
                    compute_loss(res.final, y, res.c, ex.gold_hop, cfg.use_aux_hop_loss).main.item()
                )
    per_hop = {h: float(np.mean(v)) for h, v in sorted(kv for kv in hits.items() if kv[0] is not None)}
    flat = [x for v in hits.values() for x in v]
    return {
        "overall": float(np.mean(flat)) if flat else 0.0,
        "per_hop": per_hop,
        "count": len(flat),
        "mean_loss": float(np.mean(losses)) if losses else 0.0,
    }


# ---------------------------------------------------------------------------
# training loop


class TrainResult(NamedTuple):
    params: ModelParams
    vocab: Vocabulary
    history: list[dict]
    best_dev: dict


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.named().items()}


def _restore(params: ModelParams, snap: dict[str, np.ndarray]):
    for k, v in params.named().items():
        v.data = snap[k].copy()


def train(cfg, g, train_examples, dev_examples, vocab=None, log_path=None, params=None) -> TrainResult:
    """Mini-batch training with gradient accumulation; keeps the epoch whose
    dev hits@1 is best.  Deterministic given (config, seed)."""
    rng = np.random.default_rng(cfg.seed)
    if vocab is None:
        vocab = build_vocabulary(train_examples, g)
    if params is None:
        params = ModelParams(len(vocab), g.n, g.num_predicates, cfg)
    train_prep = prepare_examples(train_examples, vocab)
    dev_prep = prepare_examples(dev_examples, vocab)
    if cfg.limit_train < 1.0:
        keep = max(1, int(round(cfg.limit_train * len(train_prep))))
        idx = rng.choice(len(train_prep), size=keep, replace=False)
        train_prep = [train_prep[i] for i in sorted(idx)]
        log.info("limit_train=%.3f: training on %d examples", cfg.limit_train, keep)

    text_form = g.form != "label"
    cache = RelationEncodingCache(params.r_enc, vocab, g.texts) if text_form else None
    opt = RAdam(params.named(), lr=cfg.lr)
    bs = cfg.effective_batch_size
    history: list[dict] = []
    best = {"overall": -1.0}
    best_snap = None
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train_prep))
            main_sum, aux_sum, aux_n = 0.0, 0.0, 0
            for lo in range(0, len(order), bs):
                batch = [train_prep[i] for i in order[lo : lo + bs]]
                opt.zero_grad()
                if cache is not None:
                    cache.invalidate()
                inv = 1.0 / len(batch)
                results = forward_batch(
                    g,
                    [ex.tokens for ex in batch],
                    [ex.topic for ex in batch],
                    params,
                    cfg,
                    cache=cache,
                )
                batch_total = None
                for ex, res in zip(batch, results):
                    y = build_target(ex.answers, g.n)
                    lb = compute_loss(res.final, y, res.c, ex.gold_hop, cfg.use_aux_hop_loss)
                    if not np.isfinite(lb.total.item()):
                        raise NumericError(f"non-finite loss for example {ex.uid!r}")
                    batch_total = lb.total if batch_total is None else batch_total + lb.total
                    main_sum += lb.main.item()
                    if lb.aux_hop is not None:
                        aux_sum += lb.aux_hop.item()
                        aux_n += 1
                # one backward per batch: the shared encoder/head subgraph is
                # traversed once, not B times
                batch_total.backward(seed=np.asarray(inv))
                opt.step()
            dev = evaluate(g, params, dev_prep, cfg, cache=cache)
            if cache is not None:
                cache.invalidate()
            rows = [
                {
                    "epoch": epoch,
                    "split": "train",
                    "loss": main_sum / max(1, len(train_prep)),
                    "aux_loss": aux_sum / aux_n if aux_n else None,
                    "hits1_per_hop": None,
                },
                {
                    "epoch": epoch,
                    "split": "dev",
                    "loss": dev["mean_loss"],
                    "aux_loss": None,
                    "hits1_per_hop": {str(k): v for k, v in dev["per_hop"].items()},
                    "hits1": dev["overall"],
                },
            ]
            history.extend(rows)
            if log_f:
                for row in rows:
                    log_f.write(json.dumps(row, sort_keys=True) + "\n")
                log_f.flush()
            log.info(
                "epoch %d: train loss %.4f, dev hits@1 %.4f %s",
                epoch,
                rows[0]["loss"],
                dev["overall"],
                dev["per_hop"],
            )
            if dev["overall"] > best["overall"]:
                best = dev | {"epoch": epoch}
                best_snap = _snapshot(params)
    finally:
        if log_f:
            log_f.close()
    if best_snap is not None:
        _restore(params, best_snap)
    return TrainResult(params=params, vocab=vocab, history=history, best_dev=best)


# ---------------------------------------------------------------------------
# checkpoints


def vocab_sha256(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def save_checkpoint(path, params: ModelParams, cfg, vocab: Vocabulary, extra: dict | None = None):
    """Versioned binary container: magic, JSON metadata, then named float64
    blocks in sorted-name order (byte-deterministic)."""
    named = sorted(params.named().items())
    meta = {
        "format": "hoptrace-checkpoint",
        "version": 1,
        "config": cfg.to_dict(),
        "model": {
            "vocab_size": params.vocab_size,
            "n": params.n,
            "num_predicates": params.num_predicates,
            "T": params.T,
            "d": params.d,
            "form": params.form,
            "head": params.head,
        },
        "optimizer": {
            "name": "radam",
            "betas": [0.9, 0.999],
            "eps": 1e-8,
            "rho_threshold": RAdam.RHO_THRESHOLD,
            "note": "variance-rectified adaptive moments; momentum-only step while rho_t <= threshold",
        },
        "vocab_sha256": vocab_sha256(vocab),
        "params": [{"name": k, "shape": list(v.data.shape)} for k, v in named],
    }
    meta.update(extra or {})
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, v in named:
            f.write(np.ascontiguousarray(v.data, dtype=np.float64).tobytes())


def load_checkpoint(path):
    """Returns (ModelParams, metadata).  The model is rebuilt from the
    embedded config, then parameter blocks overwrite the fresh init."""
    from .config import TrainConfig

    with open(path, "rb") as f:
        magic = f.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise DataError(f"{path}: not a hoptrace checkpoint")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(blob_len).decode("utf-8"))
        cfg = TrainConfig(**meta["config"]).validate()
        m = meta["model"]
        params = ModelParams(m["vocab_size"], m["n"], m["num_predicates"], cfg)
        named = params.named()
        for block in meta["params"]:
            name, shape = block["name"], tuple(block["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(count * 8), dtype=np.float64).reshape(shape)
            if name not in named:
                raise DataError(f"{path}: unexpected parameter block {name!r}")
            if named[name].data.shape != shape:
                raise DataError(f"{path}: shape mismatch for {name!r}")
            named[name].data = arr.copy()
    return params, meta
