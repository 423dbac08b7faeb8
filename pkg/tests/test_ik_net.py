import numpy as np
import pytest

from handkit import bio_dof, ik_net, kinematics as kin
from handkit.hand_model import ShapeParams
from handkit.ik_net import (MlpIk, TrainConfig, batch_loss, featurize,
                            featurize_batch, generate_pairs, ik_loss,
                            load_checkpoint, predict, save_checkpoint,
                            train)
from handkit.rotations import rodrigues


def features_oracle(joints):
    """Per-edge loop: direction and scaled length for each kinematic bone."""
    dirs = []
    lengths = []
    for child in range(1, 21):
        parent = kin.PARENTS[child]
        b = [joints[child][c] - joints[parent][c] for c in range(3)]
        n = (b[0] ** 2 + b[1] ** 2 + b[2] ** 2) ** 0.5
        dirs.extend(v / n for v in b)
        lengths.append(n / 100.0)
    return np.array(dirs + lengths)


def random_skeleton(rng):
    joints = np.zeros((21, 3))
    joints[1:] = rng.normal(scale=30, size=(20, 3))
    return joints + rng.normal(scale=20, size=3)


# ---------------------------------------------------------------------------
# featurize
# ---------------------------------------------------------------------------

def test_featurize_rest_pose(desk):
    from handkit.hand_model import rest_joints
    joints = rest_joints(desk).joints
    feats = featurize(joints)
    parents = np.array([p for p, _ in kin.BONES])
    children = np.array([c for _, c in kin.BONES])
    expected_len = np.linalg.norm(joints[children] - joints[parents], axis=1)
    np.testing.assert_allclose(feats.lengths, expected_len / 100.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(feats.directions, axis=1), 1.0,
                               atol=1e-6)


def test_featurize_translation_invariant(rng):
    joints = random_skeleton(rng)
    a = featurize(joints).as_vector()
    b = featurize(joints + [123.0, -55.0, 9.0]).as_vector()
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_featurize_rotation_equivariant(rng):
    joints = random_skeleton(rng)
    rot = rodrigues(rng.normal(size=3))
    a = featurize(joints)
    b = featurize(joints @ rot.T)
    np.testing.assert_allclose(b.directions, a.directions @ rot.T, atol=1e-9)
    np.testing.assert_allclose(b.lengths, a.lengths, atol=1e-9)


def test_featurize_matches_edge_oracle(rng):
    joints = random_skeleton(rng)
    np.testing.assert_allclose(featurize(joints).as_vector(),
                               features_oracle(joints), atol=1e-12)


def test_featurize_zero_length_bone(rng):
    joints = random_skeleton(rng)
    joints[2] = joints[1]
    with pytest.raises(ik_net.DegenerateSkeletonError):
        featurize(joints)


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def test_predict_zero_heads_gives_rest(desk, limits, rng):
    net = MlpIk(seed=3)
    net.head_theta.weight[:] = 0.0
    net.head_beta.weight[:] = 0.0
    feats = featurize(random_skeleton(rng))
    bio, beta = predict(net, feats, limits)
    assert np.all(bio.values == 0.0)
    assert np.all(beta.beta == 0.0)


def test_predict_deterministic(desk, limits, rng):
    net = MlpIk(seed=4)
    feats = featurize(random_skeleton(rng))
    a = predict(net, feats, limits)
    b = predict(net, feats, limits)
    assert a[0].values.tobytes() == b[0].values.tobytes()
    assert a[1].beta.tobytes() == b[1].beta.tobytes()


def test_predict_clamps_to_limits(limits, rng):
    net = MlpIk(seed=5)
    net.head_theta.bias[:] = 10.0  # force everything far above the limits
    bio, _ = predict(net, featurize(random_skeleton(rng)), limits)
    assert bio_dof.is_feasible(bio, limits)
    np.testing.assert_array_equal(bio.values, limits.upper)


def test_hand_traced_single_block_forward():
    # one block, identity-like weights, crafted input: the activation path is
    # hand-computable because batch statistics start at mean 0 / var 1
    net = MlpIk(widths=(4,), input_dim=4, seed=0)
    net.blocks[0][0].weight[:] = np.eye(4)
    net.blocks[0][0].bias[:] = [0.0, 1.0, -1.0, 0.5]
    net.head_theta.weight[:] = 0.0
    net.head_theta.weight[0, 0] = 1.0
    net.head_theta.bias[:] = 0.0
    net.head_beta.weight[:] = 0.0
    x = np.array([[2.0, -3.0, 0.25, 0.0]])
    theta, _ = net.forward(x, training=False)
    # linear: [2, -2, -0.75, 0.5]; bn is identity at init (eps shrinks
    # slightly); relu keeps [2, 0, 0, 0.5]; head picks feature 0
    expected = 2.0 / np.sqrt(1.0 + 1e-5)
    assert theta[0, 0] == pytest.approx(expected, rel=1e-12)
    assert np.all(theta[0, 1:] == 0.0)


# ---------------------------------------------------------------------------
# ik_loss
# ---------------------------------------------------------------------------

def test_ik_loss_zero_for_equal_pairs(desk, axes, limits, rng):
    bio = bio_dof.BioPose(bio_dof.sample_uniform(limits, 1, rng)[0])
    beta = ShapeParams(rng.normal(scale=0.5, size=10))
    total, lt, lb, lp = ik_loss((bio, beta), (bio, beta), desk, axes)
    assert total == lt == lb == lp == 0.0


def test_ik_loss_single_component_offset(desk, axes, limits, rng):
    bio = bio_dof.BioPose(bio_dof.sample_uniform(limits, 1, rng)[0])
    beta = ShapeParams(rng.normal(scale=0.5, size=10))
    delta = 0.23
    shifted = bio.values.copy()
    shifted[bio_dof.DOF_NAMES.index("ring_pip_flex")] += delta
    total, lt, lb, lp = ik_loss((bio_dof.BioPose(shifted), beta), (bio, beta),
                                desk, axes)
    assert lt == pytest.approx(delta / 23.0, rel=1e-12)
    assert lb == 0.0
    # joint term equals the FK-difference oracle
    art_p = bio_dof.expand_batch(shifted[None], axes)
    art_t = bio_dof.expand_batch(bio.values[None], axes)
    jp = kin.fk_forward(desk, art_p, beta.beta[None],
                        want_regressed=True).regressed_joints
    jt = kin.fk_forward(desk, art_t, beta.beta[None],
                        want_regressed=True).regressed_joints
    assert lp == pytest.approx(np.abs(jp - jt).mean(), rel=1e-12)
    assert total == pytest.approx(lt + lb + lp, rel=1e-12)


def test_ik_loss_l1_homogeneity(desk, axes, limits, rng):
    bio = bio_dof.BioPose(bio_dof.sample_uniform(limits, 1, rng)[0])
    beta = ShapeParams(rng.normal(scale=0.5, size=10))
    d_bio = rng.normal(scale=0.05, size=23)
    d_beta = rng.normal(scale=0.05, size=10)
    _, lt1, lb1, _ = ik_loss((bio_dof.BioPose(bio.values + d_bio),
                              ShapeParams(beta.beta + d_beta)), (bio, beta),
                             desk, axes)
    _, lt2, lb2, _ = ik_loss((bio_dof.BioPose(bio.values + 2 * d_bio),
                              ShapeParams(beta.beta + 2 * d_beta)), (bio, beta),
                             desk, axes)
    assert lt2 == pytest.approx(2 * lt1, rel=1e-12)
    assert lb2 == pytest.approx(2 * lb1, rel=1e-12)


# ---------------------------------------------------------------------------
# generate_pairs
# ---------------------------------------------------------------------------

def test_generate_pairs_deterministic(desk, limits):
    a = generate_pairs(desk, 3, limits, seed=77)
    b = generate_pairs(desk, 3, limits, seed=77)
    assert a.bio.tobytes() == b.bio.tobytes()
    assert a.skeletons.tobytes() == b.skeletons.tobytes()


def test_generate_pairs_feasible(desk, limits):
    data = generate_pairs(desk, 200, limits, seed=8)
    assert np.all(data.bio >= limits.lower)
    assert np.all(data.bio <= limits.upper)


def test_generate_pairs_skeletons_recomputable(desk, axes, limits):
    data = generate_pairs(desk, 10, limits, seed=9)
    art = bio_dof.expand_batch(data.bio, axes)
    again = kin.fk_forward(desk, art, data.beta).joints
    np.testing.assert_allclose(data.skeletons, again, atol=1e-12)


def test_generate_pairs_rejects_empty(desk, limits):
    with pytest.raises(ValueError):
        generate_pairs(desk, 0, limits)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_train_zero_rate_keeps_parameters(desk, limits):
    data = generate_pairs(desk, 32, limits, seed=10)
    net = MlpIk(seed=1)
    before = {name: getattr(owner, attr).copy()
              for name, owner, attr in net.parameters()}
    config = TrainConfig(epochs=1, decay_epochs=(), batch_size=32,
                         learning_rate=0.0, seed=0)
    net, curve = train(net, data, config)
    for name, owner, attr in net.parameters():
        np.testing.assert_array_equal(getattr(owner, attr), before[name])
    assert len(curve) == 1


def test_backprop_matches_finite_differences(desk, axes, limits, rng):
    data = generate_pairs(desk, 16, limits, seed=12)
    feats = featurize_batch(data.skeletons[:8])
    net = MlpIk(seed=2)
    net.forward(featurize_batch(data.skeletons), training=True)  # warm stats
    net.zero_grads()
    batch_loss(net, desk, axes, feats, data.bio[:8], data.beta[:8],
               data.skeletons[:8], training=False, compute_grads=True)
    params = list(net.parameters())
    h = 1e-6
    for _ in range(12):
        name, owner, attr = params[rng.integers(len(params))]
        arr = getattr(owner, attr)
        i = rng.integers(arr.size)
        ana = getattr(owner, "grad_" + attr).reshape(-1)[i]
        orig = arr.reshape(-1)[i]
        arr.reshape(-1)[i] = orig + h
        lp = batch_loss(net, desk, axes, feats, data.bio[:8], data.beta[:8],
                        data.skeletons[:8])[0]
        arr.reshape(-1)[i] = orig - h
        lm = batch_loss(net, desk, axes, feats, data.bio[:8], data.beta[:8],
                        data.skeletons[:8])[0]
        arr.reshape(-1)[i] = orig
        fd = (lp - lm) / (2 * h)
        assert ana == pytest.approx(fd, rel=1e-3, abs=1e-9)


def test_short_training_reduces_loss(desk, limits):
    data = generate_pairs(desk, 512, limits, seed=13)
    net = MlpIk(seed=3)
    config = TrainConfig(epochs=8, decay_epochs=(6,), batch_size=32,
                         learning_rate=3e-4, seed=1)
    net, curve = train(net, data, config)
    assert curve[-1]["total"] < curve[0]["total"]


def test_train_deterministic(desk, limits):
    data = generate_pairs(desk, 64, limits, seed=14)
    config = TrainConfig(epochs=2, decay_epochs=(), batch_size=32,
                         learning_rate=1e-4, seed=2)
    n1, c1 = train(MlpIk(seed=4), data, config)
    n2, c2 = train(MlpIk(seed=4), data, config)
    assert c1 == c2
    for (name, o1, a1), (_, o2, a2) in zip(n1.parameters(), n2.parameters()):
        np.testing.assert_array_equal(getattr(o1, a1), getattr(o2, a2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, decay_epochs=(10,))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip(desk, limits, tmp_path, rng):
    data = generate_pairs(desk, 64, limits, seed=15)
    net, _ = train(MlpIk(seed=6), data,
                   TrainConfig(epochs=1, decay_epochs=(), batch_size=32,
                               learning_rate=1e-4, seed=3))
    path = tmp_path / "net.hkc"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    feats = featurize(random_skeleton(rng))
    a = predict(net, feats, limits)
    b = predict(loaded, feats, limits)
    # float32 storage: predictions agree to storage precision
    np.testing.assert_allclose(a[0].values, b[0].values, atol=1e-4)
    np.testing.assert_allclose(a[1].beta, b[1].beta, atol=1e-4)
