"""Representation learning for weighting, without outcomes.

A multilayer perceptron x -> trunk -> representation -> per-task head is
trained on the AutoDML loss of Chernozhukov et al.,

    L(v) = mean_source v(x)^2 - 2 * mean_target v(x),

which equals ||v - w*||^2 in L2 of the source distribution up to a
constant, w* being the source-to-target density ratio. Minimizing it fits
the head to the true weights while the pre-specified hidden layer learns a
representation that supports them; no outcome ever enters the loss. For a
family of tasks the per-task losses are averaged under the task
distribution, with all heads sharing one trunk.

Everything is plain numpy with manual backpropagation and Adam, so
training is bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import ast
import copy
import struct
from dataclasses import dataclass

import numpy as np

from .kernels import as_rep_matrix
from .qp import WeightVector
from .tasks import TaskFamily

__all__ = [
    "TrainConfig",
    "RepNet",
    "autodml_loss",
    "joint_autodml_loss",
    "gradient",
    "train",
    "extract_representation",
    "nn_head_weights",
    "select_representation",
    "save_repnet",
    "load_repnet",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 3
    max_epochs: int = 300
    validation_fraction: float = 0.2
    batch_size: int | None = None
    rng_seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def autodml_loss(v_on_source: np.ndarray, v_on_target: np.ndarray) -> float:
    """Empirical loss: mean of squares on source minus twice mean on target."""
    vs = np.asarray(v_on_source, dtype=float).ravel()
    vt = np.asarray(v_on_target, dtype=float).ravel()
    if vs.size == 0 or vt.size == 0:
        raise ValueError("loss needs non-empty source and target evaluations")
    if not (np.all(np.isfinite(vs)) and np.all(np.isfinite(vt))):
        raise ValueError("non-finite head values")
    return float(np.mean(vs**2) - 2.0 * np.mean(vt))


def _init_stack(dims, rng):
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        params.append([w, b])
    return params


def _forward_stack(params, x, relu_last):
    """Returns (output, caches); caches hold (layer input, pre-activation)."""
    h = x
    caches = []
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        caches.append((h, z))
        h = np.maximum(z, 0.0) if (i < last or relu_last) else z
    return h, caches


def _backward_stack(params, caches, grad_out, relu_last):
    grads = [None] * len(params)
    g = grad_out
    last = len(params) - 1
    for i in range(last, -1, -1):
        h_in, z = caches[i]
        if i < last or relu_last:
            g = g * (z > 0)
        grads[i] = [h_in.T @ g, g.sum(axis=0)]
        g = g @ params[i][0].T
    return grads, g


class RepNet:
    """Shared trunk (through the representation layer) plus per-task heads.

    Trunk layers all use ReLU, including the representation output; each
    head is ReLU hidden layers followed by an affine scalar output. The
    default architecture is d -> 200 -> 10 -> 200 -> 1.
    """

    def __init__(self, trunk_dims, head_dims, head_labels, rng):
        self.trunk_dims = tuple(int(d) for d in trunk_dims)
        self.head_dims = tuple(int(d) for d in head_dims)
        if len(self.trunk_dims) < 1 or len(self.head_dims) < 2:
            raise ValueError("need at least input dim and a scalar head layer")
        if self.head_dims[0] != self.trunk_dims[-1] or self.head_dims[-1] != 1:
            raise ValueError("head must map the representation to a scalar")
        self.trunk = _init_stack(self.trunk_dims, rng)
        self.heads = {}
        for label in head_labels:
            if label in self.heads:
                raise ValueError(f"duplicate head label {label!r}")
            self.heads[label] = _init_stack(self.head_dims, rng)
        self.history = None

    @classmethod
    def create(
        cls,
        d: int,
        head_labels,
        rep_dim: int = 10,
        trunk_hidden=(200,),
        head_hidden=(200,),
        rng_seed: int = 0,
    ) -> "RepNet":
        rng = np.random.default_rng(rng_seed)
        return cls(
            trunk_dims=(d, *trunk_hidden, rep_dim),
            head_dims=(rep_dim, *head_hidden, 1),
            head_labels=head_labels,
            rng=rng,
        )

    @property
    def rep_dim(self) -> int:
        return self.trunk_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.trunk_dims[0]

    def n_parameters(self) -> int:
        total = sum(w.size + b.size for w, b in self.trunk)
        total += sum(w.size + b.size for stack in self.heads.values() for w, b in stack)
        return total

    def _param_stacks(self):
        yield self.trunk
        for label in self.heads:
            yield self.heads[label]

    def representation_of(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out, _ = _forward_stack(self.trunk, x, relu_last=True)
        return out

    def head_values(self, x: np.ndarray, label) -> np.ndarray:
        if label not in self.heads:
            raise KeyError(f"no head for task index {label!r}")
        rep = self.representation_of(x)
        out, _ = _forward_stack(self.heads[label], rep, relu_last=False)
        return out.ravel()

    def get_flat(self) -> np.ndarray:
        pieces = []
        for stack in self._param_stacks():
            for w, b in stack:
                pieces.append(w.ravel())
                pieces.append(b.ravel())
        return np.concatenate(pieces)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        offset = 0
        for stack in self._param_stacks():
            for layer in stack:
                for idx in (0, 1):
                    size = layer[idx].size
                    layer[idx] = flat[offset : offset + size].reshape(layer[idx].shape)
                    offset += size
        if offset != flat.size:
            raise ValueError("flat parameter vector has the wrong length")

    def snapshot(self):
        return copy.deepcopy([self.trunk, self.heads])

    def restore(self, snap):
        self.trunk = copy.deepcopy(snap[0])
        self.heads = copy.deepcopy(snap[1])


def forward(net: RepNet, x, label):
    """Single-input forward pass: (representation vector, scalar head value)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (net.input_dim,):
        raise ValueError(f"input has dim {x.shape[0]}, net expects {net.input_dim}")
    rep = net.representation_of(x[None, :])[0]
    value = net.head_values(x[None, :], label)[0]
    return rep, float(value)


def joint_autodml_loss(net: RepNet, family: TaskFamily) -> float:
    total = 0.0
    for task, p in zip(family.tasks, family.p):
        vs = net.head_values(task.source_x, task.index)
        vt = net.head_values(task.target_x, task.index)
        total += p * autodml_loss(vs, vt)
    return float(total)


def _loss_and_gradient(net: RepNet, batches):
    """Joint loss and its exact gradient over (label, p, source, target) batches.

    Gradients come back in the same nested structure as the parameters:
    (trunk grads, {label: head grads}).
    """
    trunk_grads = [[np.zeros_like(w), np.zeros_like(b)] for w, b in net.trunk]
    head_grads = {
        label: [[np.zeros_like(w), np.zeros_like(b)] for w, b in stack]
        for label, stack in net.heads.items()
    }
    loss = 0.0
    for label, p, xs, xt in batches:
        stack = net.heads[label]
        rep_s, cache_ts = _forward_stack(net.trunk, xs, relu_last=True)
        vs, cache_hs = _forward_stack(stack, rep_s, relu_last=False)
        rep_t, cache_tt = _forward_stack(net.trunk, xt, relu_last=True)
        vt, cache_ht = _forward_stack(stack, rep_t, relu_last=False)
        n_s, n_t = xs.shape[0], xt.shape[0]
        loss += p * (np.mean(vs**2) - 2.0 * np.mean(vt))

        d_vs = (2.0 * p / n_s) * vs
        d_vt = np.full_like(vt, -2.0 * p / n_t)
        g_head_s, g_rep_s = _backward_stack(stack, cache_hs, d_vs, relu_last=False)
        g_head_t, g_rep_t = _backward_stack(stack, cache_ht, d_vt, relu_last=False)
        for acc, gs, gt in zip(head_grads[label], g_head_s, g_head_t):
            acc[0] += gs[0] + gt[0]
            acc[1] += gs[1] + gt[1]
        g_trunk_s, _ = _backward_stack(net.trunk, cache_ts, g_rep_s, relu_last=True)
        g_trunk_t, _ = _backward_stack(net.trunk, cache_tt, g_rep_t, relu_last=True)
        for acc, gs, gt in zip(trunk_grads, g_trunk_s, g_trunk_t):
            acc[0] += gs[0] + gt[0]
            acc[1] += gs[1] + gt[1]
    return float(loss), (trunk_grads, head_grads)


def _family_batches(family: TaskFamily):
    return [
        (task.index, p, task.source_x, task.target_x)
        for task, p in zip(family.tasks, family.p)
    ]


def gradient(net: RepNet, family: TaskFamily):
    """Exact analytic gradient of the joint loss; mirrors parameter layout."""
    _, grads = _loss_and_gradient(net, _family_batches(family))
    return grads


def gradient_flat(net: RepNet, family: TaskFamily) -> np.ndarray:
    trunk_grads, head_grads = gradient(net, family)
    pieces = []
    for stack in [trunk_grads] + [head_grads[label] for label in net.heads]:
        for gw, gb in stack:
            pieces.append(gw.ravel())
            pieces.append(gb.ravel())
    return np.concatenate(pieces)


class _Adam:
    def __init__(self, net: RepNet, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [[np.zeros_like(p) for p in layer] for stack in net._param_stacks() for layer in stack]
        self.v = [[np.zeros_like(p) for p in layer] for stack in net._param_stacks() for layer in stack]

    def step(self, net: RepNet, grads):
        cfg = self.cfg
        self.t += 1
        trunk_grads, head_grads = grads
        flat_layers = list(net.trunk) + [
            layer for label in net.heads for layer in net.heads[label]
        ]
        flat_grads = list(trunk_grads) + [
            layer for label in net.heads for layer in head_grads[label]
        ]
        correction1 = 1.0 - cfg.beta1**self.t
        correction2 = 1.0 - cfg.beta2**self.t
        for layer, grad, m, v in zip(flat_layers, flat_grads, self.m, self.v):
            for idx in (0, 1):
                g = grad[idx]
                if cfg.weight_decay and idx == 0:
                    g = g + cfg.weight_decay * layer[idx]
                m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * g
                v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * g**2
                step = cfg.learning_rate * (m[idx] / correction1) / (
                    np.sqrt(v[idx] / correction2) + cfg.eps
                )
                layer[idx] = layer[idx] - step


def _split_indices(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = int(np.floor(fraction * n))
    n_val = min(n_val, n - 1)
    if n_val <= 0:
        return perm, perm  # too few rows to hold anything out
    return perm[n_val:], perm[:n_val]


def train(family: TaskFamily, cfg: TrainConfig, net: RepNet | None = None, **arch) -> RepNet:
    """Fit trunk and heads by Adam on the joint loss with early stopping.

    A fixed fraction of each task's source and target rows is held out
    once; training stops after `patience` epochs without validation
    improvement and the best-epoch parameters are restored. Fully
    deterministic for a given seed.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    if net is None:
        d = family.tasks[0].source_x.shape[1]
        labels = [t.index for t in family.tasks]
        net = RepNet(
            trunk_dims=(d, *arch.get("trunk_hidden", (200,)), arch.get("rep_dim", 10)),
            head_dims=(arch.get("rep_dim", 10), *arch.get("head_hidden", (200,)), 1),
            head_labels=labels,
            rng=rng,
        )
    if cfg.max_epochs == 0:
        net.history = {"train_loss": [], "val_loss": [], "best_epoch": 0}
        return net

    splits = []
    for task in family.tasks:
        tgt_tr, tgt_val = _split_indices(task.n_target, cfg.validation_fraction, rng)
        if task.source_rows_in_target is not None:
            # source rows live inside the target sample: keep the two splits
            # consistent so no row trains on one side and validates on the other
            val_mask = np.zeros(task.n_target, dtype=bool)
            val_mask[tgt_val] = True
            src_val = np.flatnonzero(val_mask[task.source_rows_in_target])
            src_tr = np.flatnonzero(~val_mask[task.source_rows_in_target])
            if src_tr.size == 0 or src_val.size == 0:
                src_tr, src_val = _split_indices(task.n_source, cfg.validation_fraction, rng)
        else:
            src_tr, src_val = _split_indices(task.n_source, cfg.validation_fraction, rng)
        splits.append((src_tr, src_val, tgt_tr, tgt_val))

    train_batches_full = [
        (task.index, p, task.source_x[s[0]], task.target_x[s[2]])
        for task, p, s in zip(family.tasks, family.p, splits)
    ]
    val_batches = [
        (task.index, p, task.source_x[s[1]], task.target_x[s[3]])
        for task, p, s in zip(family.tasks, family.p, splits)
    ]

    optimizer = _Adam(net, cfg)
    best_val = np.inf
    best_snap = net.snapshot()
    best_epoch = 0
    since_improve = 0
    train_hist, val_hist = [], []

    def run_epoch() -> float:
        if cfg.batch_size is None:
            loss, grads = _loss_and_gradient(net, train_batches_full)
            optimizer.step(net, grads)
            return loss
        loss = 0.0
        chunked = []
        n_steps = 1
        for label, p, xs, xt in train_batches_full:
            steps = max(1, int(np.ceil(xs.shape[0] / cfg.batch_size)))
            n_steps = max(n_steps, steps)
            src_chunks = np.array_split(rng.permutation(xs.shape[0]), min(steps, xs.shape[0]))
            tgt_chunks = np.array_split(rng.permutation(xt.shape[0]), min(steps, xt.shape[0]))
            chunked.append((label, p, xs, xt, src_chunks, tgt_chunks))
        for step in range(n_steps):
            batches = [
                (
                    label,
                    p,
                    xs[src_chunks[step % len(src_chunks)]],
                    xt[tgt_chunks[step % len(tgt_chunks)]],
                )
                for label, p, xs, xt, src_chunks, tgt_chunks in chunked
            ]
            step_loss, grads = _loss_and_gradient(net, batches)
            optimizer.step(net, grads)
            loss += step_loss / n_steps
        return loss

    for epoch in range(1, cfg.max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence caught below
            loss = run_epoch()
            val_loss, _ = _loss_and_gradient(net, val_batches)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite training loss at epoch {epoch}; "
                "try a smaller learning rate"
            )
        if not np.isfinite(val_loss):
            raise RuntimeError(
                f"non-finite validation loss at epoch {epoch}; "
                "try a smaller learning rate"
            )
        train_hist.append(loss)
        val_hist.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_snap = net.snapshot()
            best_epoch = epoch
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.patience:
                break

    net.restore(best_snap)
    net.history = {"train_loss": train_hist, "val_loss": val_hist, "best_epoch": best_epoch}
    return net


def extract_representation(net: RepNet):
    """Freeze the trunk into a standalone map; later training cannot touch it."""
    params = copy.deepcopy(net.trunk)

    def rep(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out, _ = _forward_stack(params, x, relu_last=True)
        return out

    rep.dim = net.rep_dim
    return rep


def nn_head_weights(net: RepNet, task) -> WeightVector:
    """Use the task head's values directly as weights (clip, mean-normalize)."""
    values = net.head_values(task.source_x, task.index)
    clipped = np.maximum(values, 0.0)
    total = clipped.sum()
    if total <= 0:
        raise ValueError("degenerate head: all head values are nonpositive")
    return WeightVector(clipped * (clipped.size / total))


def select_representation(candidates, family: TaskFamily, cfg: TrainConfig | None = None):
    """Pick the candidate representation whose best-fit head loss is lowest.

    For each candidate map a fresh head (no trunk) is trained on the
    phi-transformed family; the candidate with the lowest achieved
    validation loss wins, ties within 1e-12 going to the earlier index.
    Candidates whose head training diverges are skipped; all diverging is
    an error.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate representations")
    cfg = cfg or TrainConfig()
    losses = []
    for phi in candidates:
        transformed = TaskFamily(
            tuple(
                type(t)(
                    index=t.index,
                    source_x=as_rep_matrix(phi(t.source_x)),
                    target_x=as_rep_matrix(phi(t.target_x)),
                )
                for t in family.tasks
            ),
            family.p,
        )
        r = transformed.tasks[0].source_x.shape[1]
        labels = [t.index for t in transformed.tasks]
        head_only = RepNet(
            trunk_dims=(r,),
            head_dims=(r, 64, 1),
            head_labels=labels,
            rng=np.random.default_rng(cfg.rng_seed),
        )
        try:
            fitted = train(transformed, cfg, net=head_only)
            achieved = min(fitted.history["val_loss"]) if fitted.history["val_loss"] else np.inf
        except RuntimeError:
            achieved = np.inf
        losses.append(achieved)
    best = min(losses)
    if not np.isfinite(best):
        raise ValueError("head training diverged for every candidate")
    for idx, value in enumerate(losses):
        if value <= best + 1e-12:
            return idx
    raise AssertionError("unreachable")


_MAGIC = b"RNW1"


def save_repnet(net: RepNet, path) -> None:
    """Flat little-endian binary: magic, layer counts, dims, labels, params.

    Parameters are written layer-major (weight matrix row-major, then
    bias) as 64-bit floats: trunk first, then each head in stored order.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", len(net.trunk), len(net.heads), len(net.head_dims) - 1))
        fh.write(struct.pack(f"<{len(net.trunk_dims)}I", *net.trunk_dims))
        fh.write(struct.pack(f"<{len(net.head_dims)}I", *net.head_dims))
        for label in net.heads:
            blob = repr(label).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
        for stack in net._param_stacks():
            for w, b in stack:
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_repnet(path) -> RepNet:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a serialized network file")
        n_trunk, n_heads, n_head_layers = struct.unpack("<III", fh.read(12))
        trunk_dims = struct.unpack(f"<{n_trunk + 1}I", fh.read(4 * (n_trunk + 1)))
        head_dims = struct.unpack(f"<{n_head_layers + 1}I", fh.read(4 * (n_head_layers + 1)))
        labels = []
        for _ in range(n_heads):
            (size,) = struct.unpack("<I", fh.read(4))
            text = fh.read(size).decode("utf-8")
            try:
                labels.append(ast.literal_eval(text))
            except (ValueError, SyntaxError):
                labels.append(text)
        net = RepNet(trunk_dims, head_dims, labels, rng=np.random.default_rng(0))
        for stack in net._param_stacks():
            for layer in stack:
                for idx in (0, 1):
                    shape = layer[idx].shape
                    count = layer[idx].size
                    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
                    layer[idx] = data.reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes in network file")
    return net
