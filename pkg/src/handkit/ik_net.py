"""Learned inverse kinematics: bone featurization, a small fully connected
network with shape and angle heads, and from-scratch training.

The input is a skeleton reduced to its 20 bones: unit directions (60 values)
plus lengths (20 values, divided by 100 so millimeter skeletons feed the net
in decimeter units).  No reference-bone channels are kept.  Three hidden
blocks (affine + per-feature batch statistics normalization + rectifier)
feed two affine heads: 23 feasible angles and 10 shape coefficients.

Training minimizes the sum of three L1 terms: angle error, shape error, and
the positional error of the joints regressed from the re-posed mesh against
the pair's ground-truth skeleton.  Backpropagation is implemented here
directly (affine, normalization, rectifier) and chains into the analytic
forward-kinematics gradients for the positional term.  Everything is
deterministic given the seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bio_dof, kinematics as kin
from .containers import read_container, write_container
from .hand_model import HandModel, ShapeParams

LENGTH_SCALE = 0.01  # mm -> decimeters for input conditioning
FEATURE_DIM = 20 * 3 + 20
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class DegenerateSkeletonError(ValueError):
    """Raised when a featurized skeleton contains a zero-length bone."""


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

@dataclass
class BoneFeatures:
    """20 unit bone directions plus 20 scaled bone lengths (80 inputs)."""

    directions: np.ndarray  # (20, 3)
    lengths: np.ndarray     # (20,), scaled by LENGTH_SCALE

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.directions.reshape(-1), self.lengths])


def featurize_batch(joints: np.ndarray) -> np.ndarray:
    """(B, 21, 3) skeletons -> (B, 80) feature rows."""
    joints = np.asarray(joints, dtype=float)
    if joints.ndim == 2:
        joints = joints[None]
    parents = np.array([p for p, _ in kin.BONES])
    children = np.array([c for _, c in kin.BONES])
    bones = joints[:, children] - joints[:, parents]          # (B, 20, 3)
    lengths = np.linalg.norm(bones, axis=2)
    if (lengths < 1e-9).any():
        raise DegenerateSkeletonError("zero-length bone in skeleton")
    dirs = bones / lengths[:, :, None]
    return np.concatenate([dirs.reshape(len(joints), -1),
                           lengths * LENGTH_SCALE], axis=1)


def featurize(skeleton) -> BoneFeatures:
    """Single-skeleton featurization (translation invariant by construction)."""
    joints = skeleton.joints if hasattr(skeleton, "joints") else skeleton
    row = featurize_batch(np.asarray(joints, dtype=float))[0]
    return BoneFeatures(directions=row[:60].reshape(20, 3),
                        lengths=row[60:])


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class _Linear:
    def __init__(self, rng, fan_in, fan_out, scale=1.0):
        self.weight = rng.normal(scale=scale * np.sqrt(2.0 / fan_in),
                                 size=(fan_in, fan_out))
        self.bias = np.zeros(fan_out)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, g):
        self.grad_weight += self._x.T @ g
        self.grad_bias += g.sum(axis=0)
        return g @ self.weight.T


class _BatchNorm:
    def __init__(self, width):
        self.gamma = np.ones(width)
        self.beta = np.zeros(width)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.grad_gamma = np.zeros(width)
        self.grad_beta = np.zeros(width)
        self._cache = None

    def forward(self, x, training):
        if training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = ((1 - BN_MOMENTUM) * self.running_mean
                                 + BN_MOMENTUM * mu)
            self.running_var = ((1 - BN_MOMENTUM) * self.running_var
                                + BN_MOMENTUM * var)
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, training, x.shape[0])
        return self.gamma * xhat + self.beta

    def backward(self, g):
        xhat, inv_std, training, batch = self._cache
        self.grad_gamma += (g * xhat).sum(axis=0)
        self.grad_beta += g.sum(axis=0)
        gx = g * self.gamma
        if not training:
            return gx * inv_std
        # full backward through the batch statistics
        return (inv_std / batch) * (batch * gx - gx.sum(axis=0)
                                    - xhat * (gx * xhat).sum(axis=0))


class _Relu:
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class MlpIk:
    """Three hidden blocks (affine + batch statistics + rectifier), two heads."""

    def __init__(self, widths=(256, 256, 256), input_dim=FEATURE_DIM, seed=0):
        if any(w < 1 for w in widths):
            raise ValueError("hidden widths must be >= 1")
        rng = np.random.default_rng(seed)
        self.widths = tuple(int(w) for w in widths)
        self.input_dim = int(input_dim)
        self.blocks = []
        fan_in = input_dim
        for w in self.widths:
            self.blocks.append((_Linear(rng, fan_in, w), _BatchNorm(w), _Relu()))
            fan_in = w
        # small-scale heads start predictions near the rest pose
        self.head_theta = _Linear(rng, fan_in, bio_dof.DOF_COUNT, scale=0.01)
        self.head_beta = _Linear(rng, fan_in, 10, scale=0.01)

    def forward(self, x, training=False):
        h = np.asarray(x, dtype=float)
        for linear, norm, relu in self.blocks:
            h = relu.forward(norm.forward(linear.forward(h), training))
        return self.head_theta.forward(h), self.head_beta.forward(h)

    def backward(self, d_theta, d_beta):
        g = self.head_theta.backward(d_theta) + self.head_beta.backward(d_beta)
        for linear, norm, relu in reversed(self.blocks):
            g = linear.backward(norm.backward(relu.backward(g)))
        return g

    def parameters(self):
        for i, (linear, norm, _) in enumerate(self.blocks):
            yield f"w{i}", linear, "weight"
            yield f"b{i}", linear, "bias"
            yield f"bn{i}_gamma", norm, "gamma"
            yield f"bn{i}_beta", norm, "beta"
        yield "head_theta_w", self.head_theta, "weight"
        yield "head_theta_b", self.head_theta, "bias"
        yield "head_beta_w", self.head_beta, "weight"
        yield "head_beta_b", self.head_beta, "bias"

    def zero_grads(self):
        for _, owner, attr in self.parameters():
            getattr(owner, "grad_" + attr).fill(0.0)

    def check_finite(self):
        for name, owner, attr in self.parameters():
            if not np.isfinite(getattr(owner, attr)).all():
                raise FloatingPointError(f"non-finite parameter {name}")


def predict(net: MlpIk, feats, limits: bio_dof.DofLimits | None = None
            ) -> tuple[bio_dof.BioPose, ShapeParams]:
    """Deterministic inference with running statistics; angles are clamped."""
    limits = limits or bio_dof.DofLimits.default()
    vec = feats.as_vector() if isinstance(feats, BoneFeatures) else np.asarray(feats)
    theta, beta = net.forward(vec[None, :], training=False)
    if not (np.isfinite(theta).all() and np.isfinite(beta).all()):
        raise FloatingPointError("non-finite network activations")
    bio = bio_dof.clamp(bio_dof.BioPose(theta[0]), limits)
    return bio, ShapeParams(beta[0])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _pose_term(model, axes, theta, beta, skel_gt, compute_grads):
    """L1 joint term through FK, plus its gradients w.r.t. (theta, beta)."""
    art = bio_dof.expand_batch(theta, axes)
    out = kin.fk_forward(model, art, beta, want_regressed=True,
                         need_grad=compute_grads)
    residual = out.regressed_joints - skel_gt
    loss = np.abs(residual).mean()
    if not compute_grads:
        return loss, None, None
    d_reg = np.sign(residual) / residual.size
    grads = kin.fk_backward(model, out, d_regressed=d_reg)
    d_theta = grads.articulation @ axes.expansion_matrix()
    return loss, d_theta, grads.beta


def ik_loss(pred, truth, model: HandModel,
            axes: bio_dof.AxisTable | None = None
            ) -> tuple[float, float, float, float]:
    """(total, angle term, shape term, joint term) between two (bio, beta) pairs.

    The joint term re-poses the mesh from the prediction, regresses its
    joints, and compares them (L1, mean over coordinates) against the joints
    obtained the same way from the truth parameters.
    """
    axes = axes or bio_dof.derive_axes(model)
    bio_p, beta_p = pred
    bio_t, beta_t = truth
    tp = bio_p.values if isinstance(bio_p, bio_dof.BioPose) else np.asarray(bio_p, float)
    tt = bio_t.values if isinstance(bio_t, bio_dof.BioPose) else np.asarray(bio_t, float)
    bp = beta_p.beta if isinstance(beta_p, ShapeParams) else np.asarray(beta_p, float)
    bt = beta_t.beta if isinstance(beta_t, ShapeParams) else np.asarray(beta_t, float)

    l_theta = float(np.abs(tp - tt).mean())
    l_beta = float(np.abs(bp - bt).mean())
    gt_art = bio_dof.expand_batch(tt[None], axes)
    gt_joints = kin.fk_forward(model, gt_art, bt[None],
                               want_regressed=True).regressed_joints
    l_pose, _, _ = _pose_term(model, axes, tp[None], bp[None], gt_joints, False)
    return l_theta + l_beta + float(l_pose), l_theta, l_beta, float(l_pose)


def batch_loss(net: MlpIk, model: HandModel, axes, feats, bio_gt, beta_gt,
               skel_gt, training=False, compute_grads=False):
    """Forward the net on a feature batch and evaluate the three-term loss.

    With compute_grads the parameter gradients are accumulated into the net
    (callers should zero_grads first).  Returns (total, l_theta, l_beta,
    l_pose) as floats.
    """
    theta, beta = net.forward(feats, training=training)
    l_theta = np.abs(theta - bio_gt).mean()
    l_beta = np.abs(beta - beta_gt).mean()
    l_pose, d_theta_pose, d_beta_pose = _pose_term(
        model, axes, theta, beta, skel_gt, compute_grads)
    total = float(l_theta + l_beta + l_pose)
    if compute_grads:
        d_theta = np.sign(theta - bio_gt) / (theta.size) + d_theta_pose
        d_beta = np.sign(beta - beta_gt) / (beta.size) + d_beta_pose
        net.backward(d_theta, d_beta)
    return total, float(l_theta), float(l_beta), float(l_pose)


# ---------------------------------------------------------------------------
# synthetic pairs and training
# ---------------------------------------------------------------------------

@dataclass
class SynthPairSet:
    """Self-generated (angles, shape, skeleton) triplets from a model's FK."""

    bio: np.ndarray        # (N, 23)
    beta: np.ndarray       # (N, 10)
    skeletons: np.ndarray  # (N, 21, 3)
    model: HandModel

    def __len__(self):
        return len(self.bio)


def generate_pairs(model: HandModel, count: int,
                   limits: bio_dof.DofLimits | None = None,
                   seed: int = 0) -> SynthPairSet:
    """Feasible angles ~ uniform over limits, shape ~ N(0, 0.5); skeleton by FK."""
    if count < 1:
        raise ValueError("count must be >= 1")
    limits = limits or bio_dof.DofLimits.default()
    rng = np.random.default_rng(seed)
    bio = bio_dof.sample_uniform(limits, count, rng)
    beta = rng.normal(scale=0.5, size=(count, 10))
    axes = bio_dof.derive_axes(model)
    art = bio_dof.expand_batch(bio, axes)
    skeletons = kin.fk_forward(model, art, beta).joints
    return SynthPairSet(bio=bio, beta=beta, skeletons=skeletons, model=model)


@dataclass
class TrainConfig:
    epochs: int = 40
    decay_epochs: tuple[int, ...] = (30, 35)
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if any(d >= self.epochs for d in self.decay_epochs):
            raise ValueError("decay epochs must precede the final epoch")
        if self.batch_size < 2:
            raise ValueError("batch statistics need batch_size >= 2")


def train(net: MlpIk, data: SynthPairSet, config: TrainConfig
          ) -> tuple[MlpIk, list[dict[str, float]]]:
    """Mini-batch first-order training; returns the net and per-epoch losses.

    The step rate drops by 10x at each epoch index in decay_epochs (epochs
    are counted from 0).  Batches are reshuffled each epoch from the config
    seed; a trailing partial batch is dropped so batch statistics stay
    well-defined.  Deterministic given (net seed, config seed).
    """
    if len(data) < config.batch_size:
        raise ValueError("need at least one full batch of pairs")
    axes = bio_dof.derive_axes(data.model)
    feats_all = featurize_batch(data.skeletons)
    rng = np.random.default_rng(config.seed)

    adam_m = {name: np.zeros_like(getattr(owner, attr))
              for name, owner, attr in net.parameters()}
    adam_v = {name: np.zeros_like(getattr(owner, attr))
              for name, owner, attr in net.parameters()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    curve: list[dict[str, float]] = []
    batches = len(data) // config.batch_size
    for epoch in range(config.epochs):
        lr = config.learning_rate
        for d in config.decay_epochs:
            if epoch >= d:
                lr /= 10.0
        perm = rng.permutation(len(data))
        sums = np.zeros(4)
        for b in range(batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            net.zero_grads()
            losses = batch_loss(net, data.model, axes, feats_all[idx],
                                data.bio[idx], data.beta[idx],
                                data.skeletons[idx], training=True,
                                compute_grads=True)
            if not np.isfinite(losses[0]):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {b}")
            sums += losses
            step += 1
            for name, owner, attr in net.parameters():
                g = getattr(owner, "grad_" + attr)
                adam_m[name] = beta1 * adam_m[name] + (1 - beta1) * g
                adam_v[name] = beta2 * adam_v[name] + (1 - beta2) * g * g
                mhat = adam_m[name] / (1 - beta1 ** step)
                vhat = adam_v[name] / (1 - beta2 ** step)
                setattr(owner, attr,
                        getattr(owner, attr) - lr * mhat / (np.sqrt(vhat) + eps))
        mean = sums / batches
        curve.append({"epoch": epoch, "total": mean[0], "theta": mean[1],
                      "beta": mean[2], "pose": mean[3]})
    net.check_finite()
    return net, curve


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(net: MlpIk, path) -> None:
    header = {
        "kind": "ik_net_checkpoint",
        "input_dim": net.input_dim,
        "widths": list(net.widths),
    }
    arrays = {}
    for i, (linear, norm, _) in enumerate(net.blocks):
        arrays[f"w{i}"] = linear.weight.astype(np.float32)
        arrays[f"b{i}"] = linear.bias.astype(np.float32)
        arrays[f"bn{i}_gamma"] = norm.gamma.astype(np.float32)
        arrays[f"bn{i}_beta"] = norm.beta.astype(np.float32)
        arrays[f"bn{i}_mean"] = norm.running_mean.astype(np.float32)
        arrays[f"bn{i}_var"] = norm.running_var.astype(np.float32)
    arrays["head_theta_w"] = net.head_theta.weight.astype(np.float32)
    arrays["head_theta_b"] = net.head_theta.bias.astype(np.float32)
    arrays["head_beta_w"] = net.head_beta.weight.astype(np.float32)
    arrays["head_beta_b"] = net.head_beta.bias.astype(np.float32)
    write_container(path, header, arrays)


def load_checkpoint(path) -> MlpIk:
    header, arrays = read_container(path)
    if header.get("kind") != "ik_net_checkpoint":
        raise ValueError(f"{path} is not an ik_net checkpoint")
    net = MlpIk(widths=tuple(header["widths"]), input_dim=header["input_dim"])
    for i, (linear, norm, _) in enumerate(net.blocks):
        linear.weight = arrays[f"w{i}"].astype(float)
        linear.bias = arrays[f"b{i}"].astype(float)
        norm.gamma = arrays[f"bn{i}_gamma"].astype(float)
        norm.beta = arrays[f"bn{i}_beta"].astype(float)
        norm.running_mean = arrays[f"bn{i}_mean"].astype(float)
        norm.running_var = arrays[f"bn{i}_var"].astype(float)
        linear.grad_weight = np.zeros_like(linear.weight)
        linear.grad_bias = np.zeros_like(linear.bias)
        norm.grad_gamma = np.zeros_like(norm.gamma)
        norm.grad_beta = np.zeros_like(norm.beta)
    net.head_theta.weight = arrays["head_theta_w"].astype(float)
    net.head_theta.bias = arrays["head_theta_b"].astype(float)
    net.head_beta.weight = arrays["head_beta_w"].astype(float)
    net.head_beta.bias = arrays["head_beta_b"].astype(float)
    net.head_theta.grad_weight = np.zeros_like(net.head_theta.weight)
    net.head_theta.grad_bias = np.zeros_like(net.head_theta.bias)
    net.head_beta.grad_weight = np.zeros_like(net.head_beta.weight)
    net.head_beta.grad_bias = np.zeros_like(net.head_beta.bias)
    return net
