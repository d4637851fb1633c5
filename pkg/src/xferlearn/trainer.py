"""Training procedures: source pretraining, joint adaptation, baselines,
and the unsupervised-adaptation ablation.

Each adaptation step runs one discriminator update followed by one
encoder/classifier update on fresh forward passes; there are no inner
optimization loops.  The source encoder stays frozen in eval mode
throughout adaptation.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses
from .data import LabeledDataset, UnlabeledDataset, batch_iterator, normalize_batch
from .discriminator import DiscriminatorSpec, MultiLayerDiscriminator
from .layers import EmbeddingNetwork, NetworkSpec, clone_into_target
from .metrics import evaluate
from .optim import Adam
from .tensor import Tensor, backward, set_deterministic


class TrainDivergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    tau_st: float = 2.0
    tau_tt: float = 1.0
    gamma: float = 0.1
    fusion: str = "sum"
    lr: float = 1e-3
    batch_source: int = 128
    batch_unlabeled: int = 128
    steps: int = 1000
    pretrain_steps: int = 1000
    eval_every: int = 200
    seed: int = 0
    embed_layer: str = "fc1"
    disc_taps: tuple = ()  # names of encoder taps fed to the discriminator
    head_widths: tuple = (500, 500, 500)
    stop_grad_prototypes: bool = False
    deterministic: bool = True
    grad_clip: float | None = None
    src_proto_per_class: int = 1000

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.tau_st <= 0 or self.tau_tt <= 0:
            raise ValueError("temperatures must be > 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


@dataclass
class TrainRecord:
    rows: list = field(default_factory=list)  # metrics CSV rows
    config: dict = field(default_factory=dict)
    seed: int = 0
    wall_clock: float = 0.0

    def log(self, step: int, report: losses.LossReport, eval_acc=None) -> None:
        self.rows.append({
            "step": step,
            "loss_sup": report.sup,
            "loss_dt_d": report.dt_d,
            "loss_dt_e": report.dt_e,
            "loss_st_src": report.st_src,
            "loss_st_sup": report.st_sup,
            "loss_st_unsup": report.st_unsup,
            "loss_total": report.total,
            "eval_acc": "" if eval_acc is None else eval_acc,
        })


def _check_finite(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise TrainDivergence(f"{what} became non-finite")


def _tap_dict(taps) -> dict:
    return dict(taps)


def _embed(net: EmbeddingNetwork, x: Tensor, layer: str) -> Tensor:
    logits, taps = net.forward(x)
    d = _tap_dict(taps)
    if layer not in d:
        raise ValueError(f"embed layer {layer!r} not among taps {list(d)}")
    return d[layer]


def _freeze(net: EmbeddingNetwork) -> None:
    for p in net.parameters():
        p.requires_grad = False
    net.eval()


def pretrain_source(d1: LabeledDataset, net_spec: NetworkSpec, config: TrainConfig):
    """Supervised pretraining on the labeled source set."""
    set_deterministic(config.deterministic)
    net = EmbeddingNetwork(net_spec, seed=config.seed)
    opt = Adam(net.parameters(), lr=config.lr, clip=config.grad_clip)
    record = TrainRecord(config=asdict(config), seed=config.seed)
    rng = np.random.default_rng((config.seed, 17))
    t0 = time.time()
    for step in range(config.pretrain_steps):
        idx = rng.choice(len(d1), size=min(config.batch_source, len(d1)), replace=False)
        x = normalize_batch(d1.images[idx])
        logits, _ = net.forward(x)
        loss = losses.supervised_ce(logits, d1.labels[idx])
        _check_finite(loss.item(), "pretraining loss")
        opt.zero_grads()
        backward(loss)
        opt.step()
        report = losses.LossReport(sup=loss.item(), total=loss.item())
        if config.eval_every and (step + 1) % config.eval_every == 0:
            record.log(step + 1, report, evaluate(net, d1).accuracy)
        else:
            record.log(step + 1, report)
    record.wall_clock = time.time() - t0
    return net, record


def source_prototypes(source_net: EmbeddingNetwork, d1: LabeledDataset,
                      config: TrainConfig) -> Tensor:
    """Per-class source centroids from the frozen encoder, computed once."""
    source_net.eval()
    n_classes = len(set(d1.classes))
    rng = np.random.default_rng((config.seed, 23))
    protos = []
    for c in sorted(set(d1.classes)):
        idx = np.flatnonzero(d1.labels == c)
        if idx.size > config.src_proto_per_class:
            idx = rng.choice(idx, size=config.src_proto_per_class, replace=False)
        feats = []
        for start in range(0, idx.size, 256):
            x = normalize_batch(d1.images[idx[start : start + 256]])
            feats.append(_embed(source_net, x, config.embed_layer).data)
        protos.append(np.concatenate(feats).mean(axis=0))
    return Tensor(np.stack(protos))


def _build_discriminator(net: EmbeddingNetwork, tap_names, config: TrainConfig
                         ) -> MultiLayerDiscriminator:
    widths = [int(np.prod(net.shapes[name])) for name in tap_names]
    spec = DiscriminatorSpec(tap_widths=widths, head_widths=list(config.head_widths),
                             decay=config.gamma, fusion=config.fusion)
    return MultiLayerDiscriminator(spec, seed=config.seed + 7)


def _select_taps(taps, names):
    d = _tap_dict(taps)
    return [d[n] for n in names]


def adapt_joint(source_net: EmbeddingNetwork, d1: LabeledDataset, d2: LabeledDataset,
                d3: UnlabeledDataset, config: TrainConfig, head_classes: int | None = None,
                reinit_head: bool = False):
    """Joint adaptation: supervised + adversarial + semantic transfer.

    With alpha == beta == 0 this degenerates to plain fine-tuning on D2
    (no discriminator or unlabeled forwards run), so the trajectory is
    bit-identical to the fine-tune baseline under shared seeds.
    """
    set_deterministic(config.deterministic)
    _freeze(source_net)
    n_target_classes = head_classes or len(set(d2.classes))
    target_net = clone_into_target(source_net, head_classes=n_target_classes,
                                   head_seed=config.seed + 3, reinit_head=reinit_head)
    target_net.train()
    record = TrainRecord(config=asdict(config), seed=config.seed)

    enc_opt = Adam(target_net.parameters(), lr=config.lr, clip=config.grad_clip)
    degenerate = config.alpha == 0 and config.beta == 0

    disc = None
    disc_opt = None
    src_protos = None
    if not degenerate:
        tap_names = config.disc_taps or tuple(source_net.spec.taps)
        disc = _build_discriminator(target_net, tap_names, config)
        disc_opt = Adam(disc.parameters(), lr=config.lr, clip=config.grad_clip)
        src_protos = source_prototypes(source_net, d1, config)

    rng = np.random.default_rng((config.seed, 31))
    x_d2 = normalize_batch(d2.images)  # full-batch D2 every step
    t0 = time.time()
    for step in range(config.steps):
        report = losses.LossReport()
        if not degenerate:
            tap_names = config.disc_taps or tuple(source_net.spec.taps)
            src_idx = rng.choice(len(d1), size=min(config.batch_source, len(d1)),
                                 replace=False)
            unl_idx = rng.choice(len(d3), size=min(config.batch_unlabeled, len(d3)),
                                 replace=False)
            x_src = normalize_batch(d1.images[src_idx])
            x_unl = normalize_batch(d3.images[unl_idx])

            # discriminator step: frozen source taps vs detached target taps
            _, src_taps = source_net.forward(x_src)
            _, tgt_taps = target_net.forward(x_unl)
            src_flat = [t.reshape(t.shape[0], -1) for t in _select_taps(src_taps, tap_names)]
            tgt_flat = [Tensor(t.data.reshape(t.shape[0], -1).copy())
                        for t in _select_taps(tgt_taps, tap_names)]
            d_src = disc.forward(src_flat)
            d_tgt = disc.forward(tgt_flat)
            loss_d = losses.domain_loss_D(d_src, d_tgt)
            report.dt_d = loss_d.item()
            _check_finite(report.dt_d, "discriminator loss")
            disc_opt.zero_grads()
            backward(loss_d)
            disc_opt.step()

            # encoder step: fresh forwards for every term
            enc_opt.zero_grads()
            disc_opt.zero_grads()
            logits2, taps2 = target_net.forward(x_d2)
            l_sup = losses.supervised_ce(logits2, d2.labels)
            _, src_taps = source_net.forward(x_src)
            _, unl_taps = target_net.forward(x_unl)
            d_src = disc.forward(
                [t.reshape(t.shape[0], -1) for t in _select_taps(src_taps, tap_names)]
            )
            d_tgt = disc.forward(
                [t.reshape(t.shape[0], -1) for t in _select_taps(unl_taps, tap_names)]
            )
            l_dt_e = losses.domain_loss_E(d_src, d_tgt)

            emb_lab = _tap_dict(taps2)[config.embed_layer]
            emb_unl = _tap_dict(unl_taps)[config.embed_layer]
            if config.stop_grad_prototypes:
                emb_for_proto = Tensor(emb_lab.data.copy())
            else:
                emb_for_proto = emb_lab
            protos = losses.prototypes(emb_for_proto, d2.labels, n_target_classes)
            st_sup = losses.metric_ce(emb_lab, d2.labels, protos)
            st_src = losses.entropy_transfer(emb_unl, src_protos, config.tau_st)
            st_unsup = losses.entropy_transfer(emb_unl, protos, config.tau_tt)
            l_st = st_src + st_sup + st_unsup

            total = losses.total_objective(l_sup, l_dt_e, l_st, config.alpha, config.beta)
            report.sup = l_sup.item()
            report.dt_e = l_dt_e.item()
            report.st_src = st_src.item()
            report.st_sup = st_sup.item()
            report.st_unsup = st_unsup.item()
            report.total = total.item()
            _check_finite(report.total, "encoder loss")
            backward(total)
            enc_opt.step()
            enc_opt.zero_grads()
            disc_opt.zero_grads()
        else:
            enc_opt.zero_grads()
            logits2, _ = target_net.forward(x_d2)
            l_sup = losses.supervised_ce(logits2, d2.labels)
            report.sup = report.total = l_sup.item()
            _check_finite(report.total, "fine-tune loss")
            backward(l_sup)
            enc_opt.step()
        record.log(step + 1, report)
    record.wall_clock = time.time() - t0
    return target_net, record


def run_baseline(kind: str, d2: LabeledDataset, config: TrainConfig,
                 source_net: EmbeddingNetwork | None = None,
                 net_spec: NetworkSpec | None = None,
                 head_classes: int | None = None, reinit_head: bool = False):
    """Supervised-only baselines: target_only (from scratch) or fine_tune."""
    set_deterministic(config.deterministic)
    n_classes = head_classes or len(set(d2.classes))
    if kind == "target_only":
        if net_spec is None:
            raise ValueError("target_only needs a network spec")
        spec = copy.deepcopy(net_spec)
        spec.layers[-1][1].out_channels = n_classes
        net = EmbeddingNetwork(spec, seed=config.seed + 3)
    elif kind == "fine_tune":
        if source_net is None:
            raise ValueError("fine_tune needs a source checkpoint")
        _freeze(source_net)
        net = clone_into_target(source_net, head_classes=n_classes,
                                head_seed=config.seed + 3, reinit_head=reinit_head)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    net.train()
    opt = Adam(net.parameters(), lr=config.lr, clip=config.grad_clip)
    record = TrainRecord(config=asdict(config), seed=config.seed)
    x_d2 = normalize_batch(d2.images)
    t0 = time.time()
    for step in range(config.steps):
        opt.zero_grads()
        logits, _ = net.forward(x_d2)
        loss = losses.supervised_ce(logits, d2.labels)
        _check_finite(loss.item(), f"{kind} loss")
        backward(loss)
        opt.step()
        record.log(step + 1, losses.LossReport(sup=loss.item(), total=loss.item()))
    record.wall_clock = time.time() - t0
    return net, record


def adapt_unsupervised(source_net: EmbeddingNetwork, d1: LabeledDataset,
                       d3: UnlabeledDataset, config: TrainConfig):
    """Adversarial-only adaptation with a shared label space.

    The classifier head is copied from the source network and frozen; only
    the target encoder body and the discriminator train.
    """
    set_deterministic(config.deterministic)
    _freeze(source_net)
    target_net = clone_into_target(source_net, head_seed=config.seed + 3)
    target_net.train()
    head_name = target_net.spec.layers[-1][0]
    enc_params = [t for n, t in target_net.params.items()
                  if not n.startswith(f"{target_net.prefix}{head_name}.")]
    for n, t in target_net.params.items():
        if n.startswith(f"{target_net.prefix}{head_name}."):
            t.requires_grad = False

    tap_names = config.disc_taps or tuple(source_net.spec.taps)
    disc = _build_discriminator(target_net, tap_names, config)
    enc_opt = Adam(enc_params, lr=config.lr, clip=config.grad_clip)
    disc_opt = Adam(disc.parameters(), lr=config.lr, clip=config.grad_clip)
    record = TrainRecord(config=asdict(config), seed=config.seed)

    rng = np.random.default_rng((config.seed, 37))
    t0 = time.time()
    for step in range(config.steps):
        src_idx = rng.choice(len(d1), size=min(config.batch_source, len(d1)), replace=False)
        unl_idx = rng.choice(len(d3), size=min(config.batch_unlabeled, len(d3)), replace=False)
        x_src = normalize_batch(d1.images[src_idx])
        x_unl = normalize_batch(d3.images[unl_idx])

        _, src_taps = source_net.forward(x_src)
        _, tgt_taps = target_net.forward(x_unl)
        src_flat = [t.reshape(t.shape[0], -1) for t in _select_taps(src_taps, tap_names)]
        tgt_detached = [Tensor(t.data.reshape(t.shape[0], -1).copy())
                        for t in _select_taps(tgt_taps, tap_names)]
        d_src = disc.forward(src_flat)
        d_tgt = disc.forward(tgt_detached)
        loss_d = losses.domain_loss_D(d_src, d_tgt)
        report = losses.LossReport(dt_d=loss_d.item())
        _check_finite(report.dt_d, "discriminator loss")
        disc_opt.zero_grads()
        backward(loss_d)
        disc_opt.step()

        enc_opt.zero_grads()
        disc_opt.zero_grads()
        _, src_taps = source_net.forward(x_src)
        _, tgt_taps = target_net.forward(x_unl)
        d_src = disc.forward([t.reshape(t.shape[0], -1)
                              for t in _select_taps(src_taps, tap_names)])
        d_tgt = disc.forward([t.reshape(t.shape[0], -1)
                              for t in _select_taps(tgt_taps, tap_names)])
        l_dt_e = losses.domain_loss_E(d_src, d_tgt)
        loss_e = losses.total_objective(Tensor(0.0), l_dt_e, Tensor(0.0),
                                        config.alpha, 0.0)
        report.dt_e = l_dt_e.item()
        report.total = loss_e.item()
        _check_finite(report.total, "encoder loss")
        if config.alpha > 0:
            backward(loss_e)
            enc_opt.step()
        enc_opt.zero_grads()
        disc_opt.zero_grads()
        record.log(step + 1, report)
    record.wall_clock = time.time() - t0
    return target_net, record
