"""Desk-scale training: AdamW with cosine learning-rate decay."""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, StructuralError
from .loss import loss_total
from .model import forward, init_state

log = logging.getLogger(__name__)


@dataclass
class LossTrace:
    epochs: list = field(default_factory=list)
    components: list = field(default_factory=list)

    @property
    def initial(self):
        return self.epochs[0]

    @property
    def final(self):
        return self.epochs[-1]


def cosine_lr(base, step, total):
    return 0.5 * base * (1.0 + np.cos(np.pi * step / max(total, 1)))


def adamw_step(state, lr, tcfg):
    """Decoupled weight decay followed by a bias-corrected Adam update."""
    b1, b2 = tcfg.betas
    t = int(state.opt.get("adam.step", np.zeros(1))[0]) + 1
    state.opt["adam.step"] = np.array([float(t)])
    for name, p in state.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.opt.setdefault(f"adam.m.{name}", np.zeros_like(p.data))
        v = state.opt.setdefault(f"adam.v.{name}", np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.data -= lr * tcfg.weight_decay * p.data
        p.data -= lr * mhat / (np.sqrt(vhat) + tcfg.eps)


def batch_loss(state, batch):
    cfg = state.config
    pred, w_hat, R = forward(state, batch.points, batch.nbrs)
    M = cfg.decoder_points
    return loss_total(pred, w_hat, R, batch.points[:, :M], batch.labels, cfg.loss_weights)


def train_toy(dataset, net_cfg, train_cfg, state=None, progress=None):
    """Train on a :class:`PatchSet`; returns the state and the per-epoch mean loss trace."""
    if len(dataset) == 0:
        raise StructuralError("empty training set")
    state = init_state(net_cfg) if state is None else state
    rng = np.random.default_rng(train_cfg.seed)
    n = len(dataset)
    bs = max(1, int(train_cfg.batch_size))
    steps_per_epoch = (n + bs - 1) // bs
    total = steps_per_epoch * train_cfg.epochs
    trace = LossTrace()
    step = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        loss_sum, comp_sum = 0.0, np.zeros(4)
        for b in range(steps_per_epoch):
            sel = np.sort(order[b * bs : (b + 1) * bs])
            batch = dataset.take(sel)
            for p in state.params.values():
                p.grad = None
            loss, parts = batch_loss(state, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"loss became {value} at epoch {epoch + 1}, batch {b + 1} (patches {sel.tolist()})"
                )
            loss.backward()
            adamw_step(state, cosine_lr(train_cfg.lr, step, total), train_cfg)
            step += 1
            loss_sum += value * len(sel)
            comp_sum += np.array([parts[k] for k in ("l1", "l2", "l3", "l4")]) * len(sel)
        trace.epochs.append(loss_sum / n)
        trace.components.append((comp_sum / n).tolist())
        log.debug("epoch %d loss %.6g", epoch + 1, trace.epochs[-1])
        if progress is not None:
            progress(epoch, trace.epochs[-1])
    return state, trace
