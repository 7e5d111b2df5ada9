import numpy as np
import pytest

import pixattack.autodiff as ad
from pixattack.attacks import (
    AttackConfig,
    METHODS,
    attack_step,
    cosine_similarity_for_sample,
    cosine_similarity_map,
    cospgd_loss,
    default_alpha,
    project_linf,
    random_init,
    run_attack,
    segpgd_loss,
    segpgd_schedule,
    vectorize_classification,
)
from pixattack.autodiff import Tensor, backward, masked_mean, per_pixel_cross_entropy
from pixattack.datagen import GeneratorSpec, generate_scene
from pixattack.errors import ConfigError, DomainError, NumericsError, ShapeError
from pixattack.models import ModelSpec, build, fit_toy

from oracles import ad_gradient, fd_gradient, grads_close


@pytest.fixture(scope="module")
def seg_scene():
    return generate_scene(GeneratorSpec(task="segmentation", height=8, width=8,
                                        num_classes=3, objects_min=1, objects_max=2,
                                        noise=0.02, max_displacement=1.0), 300)


@pytest.fixture(scope="module")
def seg_model(seg_scene):
    m = build(ModelSpec(arch="tiny_seg", hidden=6, depth=2, num_classes=3, seed=21))
    return fit_toy(m, [seg_scene], steps=200, lr=0.05)


@pytest.fixture(scope="module")
def flow_scene():
    return generate_scene(GeneratorSpec(task="flow", height=8, width=8,
                                        objects_min=1, objects_max=2, noise=0.02,
                                        max_displacement=1.0), 301)


@pytest.fixture(scope="module")
def flow_model(flow_scene):
    m = build(ModelSpec(arch="tiny_flow", hidden=6, depth=2, seed=22))
    return fit_toy(m, [flow_scene], steps=100, lr=0.02)


@pytest.fixture(scope="module")
def disp_scene():
    return generate_scene(GeneratorSpec(task="disparity", height=8, width=8,
                                        objects_min=1, objects_max=2, noise=0.02,
                                        max_displacement=1.0), 302)


@pytest.fixture(scope="module")
def disp_model(disp_scene):
    m = build(ModelSpec(arch="tiny_disp", hidden=6, depth=2, seed=23))
    return fit_toy(m, [disp_scene], steps=100, lr=0.02)


# --------------------------------------------------------------------------
# configuration


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        AttackConfig(method="bim")
    with pytest.raises(ConfigError):
        AttackConfig(method="pgd", epsilon=0.0)
    with pytest.raises(ConfigError):
        AttackConfig(method="pgd", epsilon=float("inf"))
    with pytest.raises(ConfigError):
        AttackConfig(method="pgd", alpha=-0.01)
    with pytest.raises(ConfigError):
        AttackConfig(method="pgd", iterations=0)
    with pytest.raises(ConfigError):
        AttackConfig(method="pgd", clamp_input=(1.0, 0.0))
    with pytest.raises(ConfigError):
        AttackConfig(method="segpgd", force_segpgd_lambda=1.5)


def test_default_step_sizes():
    assert default_alpha("fgsm", 0.08) == 0.08
    assert default_alpha("pgd", 0.03) == 0.01
    assert default_alpha("segpgd", 0.03) == 0.01
    assert default_alpha("cospgd", 0.03) == 0.15
    with pytest.raises(ConfigError):
        default_alpha("deepfool", 0.03)
    assert AttackConfig(method="cospgd").resolved_alpha() == 0.15
    assert AttackConfig(method="pgd", alpha=0.2).resolved_alpha() == 0.2


def test_fgsm_resolves_to_single_plain_step():
    cfg = AttackConfig(method="fgsm", iterations=9, random_init=True)
    assert cfg.resolved_iterations() == 1
    assert cfg.resolved_random_init() is False
    assert cfg.resolved_alpha() == cfg.epsilon


# --------------------------------------------------------------------------
# projection and initialisation


def test_project_clips_to_ball():
    assert project_linf(np.array(0.60), np.array(0.50), 0.03).item() == pytest.approx(0.53)


def test_project_then_range_clamp():
    out = project_linf(np.array(0.52), np.array(0.50), 0.03, clamp_range=(0.0, 0.51))
    assert out.item() == pytest.approx(0.51)


def test_project_is_idempotent():
    rng = np.random.default_rng(0)
    clean = rng.uniform(0, 1, (3, 5, 5))
    cand = clean + rng.uniform(-0.2, 0.2, clean.shape)
    once = project_linf(cand, clean, 0.05, (0.0, 1.0))
    twice = project_linf(once, clean, 0.05, (0.0, 1.0))
    assert once.tobytes() == twice.tobytes()


def test_project_leaves_inputs_alone():
    cand = np.array([0.9, 0.1])
    clean = np.array([0.5, 0.5])
    project_linf(cand, clean, 0.01)
    assert cand.tolist() == [0.9, 0.1]


def test_project_validation():
    with pytest.raises(ShapeError):
        project_linf(np.zeros(3), np.zeros(4), 0.03)
    with pytest.raises(DomainError):
        project_linf(np.zeros(3), np.zeros(3), -0.1)


def test_random_init_fills_the_open_ball():
    clean = np.full(1_000_000, 0.5)
    delta = random_init(clean, 0.03, seed=123) - clean
    peak = np.abs(delta).max()
    assert 0.0299 < peak < 0.03


def test_random_init_respects_range_clamp():
    clean = np.zeros(1000)
    out = random_init(clean, 0.05, seed=3, clamp_range=(0.0, 1.0))
    assert out.min() >= 0.0
    assert np.abs(out).max() <= 0.05


def test_random_init_is_seeded():
    clean = np.full((3, 4, 4), 0.5)
    a = random_init(clean, 0.03, seed=9)
    b = random_init(clean, 0.03, seed=9)
    c = random_init(clean, 0.03, seed=10)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


# --------------------------------------------------------------------------
# cosine similarity


def test_cossim_exact_one_for_positive_multiples():
    # power-of-two scales keep the stored vector an exact multiple
    rng = np.random.default_rng(4)
    target = rng.normal(size=(3, 6, 6))
    for scale in (0.5, 1.0, 2.0, 4.0):
        out = cosine_similarity_map(Tensor(scale * target), Tensor(target))
        assert np.all(out.data == 1.0)


def test_cossim_exact_minus_one_for_negative_multiples():
    rng = np.random.default_rng(5)
    target = rng.normal(size=(2, 4, 4))
    out = cosine_similarity_map(Tensor(-0.5 * target), Tensor(target))
    assert np.all(out.data == -1.0)


def test_cossim_zero_norm_pixels_get_zero():
    pred = np.zeros((2, 1, 2))
    target = np.ones((2, 1, 2))
    out = cosine_similarity_map(Tensor(pred), Tensor(target))
    assert out.data.tolist() == [[0.0, 0.0]]
    # and the other way round
    out = cosine_similarity_map(Tensor(target), Tensor(pred))
    assert out.data.tolist() == [[0.0, 0.0]]


def test_cossim_single_channel_is_a_sign():
    pred = np.array([[[2.0, -3.0, 0.0, 5.0]]])
    target = np.array([[[4.0, 6.0, 7.0, -1.0]]])
    out = cosine_similarity_map(Tensor(pred), Tensor(target))
    assert out.data.tolist() == [[1.0, -1.0, 0.0, -1.0]]


def test_cossim_range_on_random_vectors():
    rng = np.random.default_rng(6)
    pred = rng.normal(size=(4, 50, 50))
    target = rng.normal(size=(4, 50, 50))
    out = cosine_similarity_map(Tensor(pred), Tensor(target)).data
    assert out.min() >= -1.0
    assert out.max() <= 1.0


def test_cossim_shape_validation():
    with pytest.raises(ShapeError):
        cosine_similarity_map(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((3, 3, 3))))
    with pytest.raises(ShapeError):
        cosine_similarity_map(Tensor(np.zeros((3, 3))), Tensor(np.zeros((3, 3))))


def test_cossim_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    pred = rng.normal(size=(3, 3, 3)) + 0.5
    target = rng.normal(size=(3, 3, 3)) - 0.2

    def scalar(ts):
        return cosine_similarity_map(ts[0], ts[1]).mean()

    fd = fd_gradient(scalar, [pred, target])
    got = ad_gradient(scalar, [pred, target])
    assert grads_close(got, fd)


def test_cossim_gradient_zero_at_zero_norm():
    pred = Tensor(np.zeros((2, 1, 1)), requires_grad=True)
    target = Tensor(np.ones((2, 1, 1)))
    backward(cosine_similarity_map(pred, target).sum())
    assert not pred.grad.any()


def test_classification_vectors_use_sigmoid_and_one_hot():
    logits = Tensor(np.zeros((2, 1, 1)))
    labels = np.zeros((1, 1), dtype=np.int64)
    pred, target = vectorize_classification(logits, labels)
    assert pred.data.tolist() == [[[0.5]], [[0.5]]]
    assert target.data.tolist() == [[[1.0]], [[0.0]]]
    sim = cosine_similarity_map(pred, target).data.item()
    assert sim == pytest.approx(0.7071067811865476, abs=1e-12)


def test_classification_vectors_validation():
    logits = Tensor(np.zeros((3, 2, 2)))
    with pytest.raises(ShapeError):
        vectorize_classification(logits, np.zeros((3, 3), dtype=np.int64))
    with pytest.raises(DomainError):
        vectorize_classification(logits, np.zeros((2, 2)))
    with pytest.raises(DomainError):
        vectorize_classification(logits, np.full((2, 2), 3, dtype=np.int64))


def test_cossim_for_each_task(seg_scene, flow_scene, disp_scene, seg_model, flow_model, disp_model):
    for scene, model, lo in ((seg_scene, seg_model, 0.0), (flow_scene, flow_model, -1.0),
                             (disp_scene, disp_model, -1.0)):
        out = model.forward(Tensor(scene.inputs))
        sim = cosine_similarity_for_sample(out, scene).data
        assert sim.shape == scene.inputs.shape[1:]
        assert sim.min() >= lo
        assert sim.max() <= 1.0


# --------------------------------------------------------------------------
# method losses


def test_cospgd_loss_single_pixel_example():
    logits = Tensor(np.zeros((2, 1, 1)))
    labels = np.zeros((1, 1), dtype=np.int64)
    loss_map = per_pixel_cross_entropy(logits, labels)
    sim = cosine_similarity_map(*vectorize_classification(logits, labels))
    loss = cospgd_loss(loss_map, sim, np.ones((1, 1), dtype=bool))
    expected = np.log(2.0) * np.sqrt(0.5)
    assert loss.data.item() == pytest.approx(expected, abs=1e-12)
    assert round(loss.data.item(), 4) == 0.4901


def test_cospgd_loss_with_unit_weights_is_plain_mean():
    rng = np.random.default_rng(8)
    logits = Tensor(rng.normal(size=(3, 4, 4)))
    labels = rng.integers(0, 3, size=(4, 4))
    mask = np.ones((4, 4), dtype=bool)
    loss_map = per_pixel_cross_entropy(logits, labels)
    weighted = cospgd_loss(loss_map, Tensor(np.ones((4, 4))), mask)
    loss_map2 = per_pixel_cross_entropy(logits, labels)
    plain = masked_mean(loss_map2, mask)
    assert weighted.data.tobytes() == plain.data.tobytes()


def test_cospgd_loss_honours_the_mask():
    loss_map = Tensor(np.array([[1.0, 3.0], [5.0, 7.0]]))
    sim = Tensor(np.full((2, 2), 0.5))
    mask = np.array([[True, False], [True, False]])
    out = cospgd_loss(loss_map, sim, mask)
    assert out.data.item() == pytest.approx(0.5 * (1.0 + 5.0) / 2.0)


def test_cospgd_loss_all_masked_raises():
    with pytest.raises(DomainError):
        cospgd_loss(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))),
                    np.zeros((2, 2), dtype=bool))


def test_cospgd_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        cospgd_loss(Tensor(np.ones((2, 2))), Tensor(np.ones((3, 3))),
                    np.ones((2, 2), dtype=bool))


def test_cospgd_detached_weight_blocks_similarity_gradient():
    rng = np.random.default_rng(9)
    raw = rng.normal(size=(2, 3, 3))
    labels = rng.integers(0, 2, size=(3, 3))
    mask = np.ones((3, 3), dtype=bool)

    def build_loss(ts, through):
        loss_map = per_pixel_cross_entropy(ts[0], labels)
        sim = cosine_similarity_map(*vectorize_classification(ts[0], labels))
        return cospgd_loss(loss_map, sim, mask, cossim_through_grad=through)

    # detached: gradient must equal the gradient of a constant-weighted mean
    x = Tensor(raw.copy(), requires_grad=True)
    backward(build_loss([x], False))
    sim_const = cosine_similarity_map(
        *vectorize_classification(Tensor(raw), labels)).data
    y = Tensor(raw.copy(), requires_grad=True)
    backward(masked_mean(ad.mul(Tensor(sim_const), per_pixel_cross_entropy(y, labels)), mask))
    assert np.allclose(x.grad, y.grad, atol=1e-15)

    # with the flag set the similarity term contributes, so the two differ
    z = Tensor(raw.copy(), requires_grad=True)
    backward(build_loss([z], True))
    assert not np.allclose(z.grad, x.grad)
    # and the full gradient matches finite differences
    fd = fd_gradient(lambda ts: build_loss(ts, True), [raw])
    assert grads_close([z.grad], fd)


def test_segpgd_schedule_values():
    assert segpgd_schedule(1, 10) == 0.0
    assert segpgd_schedule(1, 3) == 0.0
    assert segpgd_schedule(6, 10) == 0.25
    assert segpgd_schedule(10, 10) == pytest.approx(0.45)
    lams = [segpgd_schedule(t, 20) for t in range(1, 21)]
    assert all(b > a for a, b in zip(lams, lams[1:]))
    assert all(l < 0.5 for l in lams)


def test_segpgd_schedule_validation():
    with pytest.raises(ConfigError):
        segpgd_schedule(0, 10)
    with pytest.raises(ConfigError):
        segpgd_schedule(11, 10)
    with pytest.raises(ConfigError):
        segpgd_schedule(1, 0)


def test_segpgd_loss_weights_by_correctness():
    loss_map = Tensor(np.array([[2.0, 4.0], [6.0, 8.0]]))
    pred = np.array([[0, 1], [1, 0]])
    gt = np.array([[0, 0], [1, 1]])  # correct at (0,0) and (1,0)
    mask = np.ones((2, 2), dtype=bool)
    # t=6, total=10 gives lambda 0.25: correct weigh 0.75, wrong 0.25
    out = segpgd_loss(loss_map, pred, gt, mask, t=6, total=10)
    expected = (0.75 * 2.0 + 0.25 * 4.0 + 0.75 * 6.0 + 0.25 * 8.0) / 4.0
    assert out.data.item() == pytest.approx(expected, abs=1e-15)


def test_segpgd_loss_first_iteration_targets_correct_pixels_only():
    loss_map = Tensor(np.array([[2.0, 4.0]]))
    pred = np.array([[0, 1]])
    gt = np.array([[0, 0]])
    mask = np.ones((1, 2), dtype=bool)
    out = segpgd_loss(loss_map, pred, gt, mask, t=1, total=10)
    assert out.data.item() == pytest.approx(2.0 / 2.0)


def test_segpgd_loss_half_lambda_is_half_the_plain_mean():
    rng = np.random.default_rng(10)
    vals = rng.uniform(0.1, 2.0, size=(4, 4))
    pred = rng.integers(0, 3, size=(4, 4))
    gt = rng.integers(0, 3, size=(4, 4))
    mask = np.ones((4, 4), dtype=bool)
    out = segpgd_loss(Tensor(vals), pred, gt, mask, t=1, total=1, lam=0.5)
    assert out.data.item() == pytest.approx(0.5 * vals.mean(), abs=1e-15)


def test_segpgd_loss_validation():
    loss_map = Tensor(np.ones((2, 2)))
    mask = np.ones((2, 2), dtype=bool)
    with pytest.raises(ShapeError):
        segpgd_loss(loss_map, np.zeros((3, 3), dtype=int), np.zeros((2, 2), dtype=int),
                    mask, t=1, total=1)
    with pytest.raises(ConfigError):
        segpgd_loss(loss_map, np.zeros((2, 2), dtype=int), np.zeros((2, 2), dtype=int),
                    mask, t=5, total=2, lam=0.3)


# --------------------------------------------------------------------------
# single steps


def test_attack_step_moves_by_exactly_alpha(seg_model, seg_scene):
    cfg = AttackConfig(method="pgd", epsilon=0.5, alpha=0.007, iterations=1,
                       random_init=False, clamp_input=None)
    x0 = np.asarray(seg_scene.inputs, dtype=np.float64)
    x1, loss, _ = attack_step(seg_model, x0, seg_scene, cfg, t=1)
    moves = np.unique(np.abs(x1 - x0).round(12))
    assert set(moves.tolist()) <= {0.0, 0.007}
    assert np.abs(x1 - x0).max() == pytest.approx(0.007)
    assert np.isfinite(loss)


def test_attack_step_rejects_bad_iteration(seg_model, seg_scene):
    cfg = AttackConfig(method="pgd", iterations=3)
    with pytest.raises(ConfigError):
        attack_step(seg_model, seg_scene.inputs, seg_scene, cfg, t=4)


def test_segpgd_needs_a_classification_task(flow_model, flow_scene):
    cfg = AttackConfig(method="segpgd", iterations=2)
    with pytest.raises(ConfigError):
        attack_step(flow_model, flow_scene.inputs, flow_scene, cfg, t=1)


def test_attack_step_reports_numerics_breakdown(seg_scene):
    m = build(ModelSpec(arch="tiny_seg", hidden=4, depth=2, num_classes=3, seed=30))
    for w in m.weights:
        w.data *= 1e305
    cfg = AttackConfig(method="pgd", iterations=1, random_init=False)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericsError):
            attack_step(m, np.asarray(seg_scene.inputs, float), seg_scene, cfg, t=1)


def test_attack_step_extras_by_method(seg_model, seg_scene):
    x0 = np.asarray(seg_scene.inputs, dtype=np.float64)
    _, _, info = attack_step(seg_model, x0, seg_scene,
                             AttackConfig(method="cospgd", iterations=1), t=1)
    assert info["cossim_map"].shape == (8, 8)
    _, _, info = attack_step(seg_model, x0, seg_scene,
                             AttackConfig(method="segpgd", iterations=1), t=1)
    assert info["correct_mask"].dtype == bool
    _, _, info = attack_step(seg_model, x0, seg_scene,
                             AttackConfig(method="pgd", iterations=1), t=1)
    assert info == {}


# --------------------------------------------------------------------------
# full runs


def test_run_attack_is_deterministic(seg_model, seg_scene):
    cfg = AttackConfig(method="cospgd", iterations=4, seed=11)
    a = run_attack(seg_model, seg_scene, cfg)
    b = run_attack(seg_model, seg_scene, cfg)
    assert a.x_adv.tobytes() == b.x_adv.tobytes()
    assert a.losses == b.losses
    assert a.linf == b.linf


def test_trace_records_the_run(seg_model, seg_scene):
    cfg = AttackConfig(method="pgd", iterations=5, alpha=0.004, seed=2)
    tr = run_attack(seg_model, seg_scene, cfg)
    assert tr.iterations == 5
    assert len(tr.losses) == 5
    assert len(tr.linf) == 5
    assert tr.alpha == 0.004
    assert tr.x_adv.shape == seg_scene.inputs.shape
    assert tr.cossim_map is None and tr.correct_mask is None


def test_trace_extras(seg_model, seg_scene):
    tr = run_attack(seg_model, seg_scene, AttackConfig(method="cospgd", iterations=2))
    assert tr.cossim_map is not None
    tr = run_attack(seg_model, seg_scene, AttackConfig(method="segpgd", iterations=2))
    assert tr.correct_mask is not None


def test_fgsm_runs_one_step_and_ignores_the_seed(seg_model, seg_scene):
    a = run_attack(seg_model, seg_scene, AttackConfig(method="fgsm", iterations=7, seed=1))
    b = run_attack(seg_model, seg_scene, AttackConfig(method="fgsm", iterations=7, seed=99))
    assert a.iterations == 1
    assert len(a.losses) == 1
    assert a.x_adv.tobytes() == b.x_adv.tobytes()


def test_every_iterate_stays_in_the_ball(seg_model, seg_scene, flow_model, flow_scene,
                                          disp_model, disp_scene):
    runs = 0
    for model, scene in ((seg_model, seg_scene), (flow_model, flow_scene),
                         (disp_model, disp_scene)):
        for method in METHODS:
            if method == "segpgd" and scene.task != "segmentation":
                continue
            for eps in (0.03, 0.1):
                for seed in (1, 2):
                    cfg = AttackConfig(method=method, epsilon=eps, iterations=3, seed=seed)
                    tr = run_attack(model, scene, cfg)
                    assert all(d <= eps + 1e-9 for d in tr.linf)
                    assert np.abs(tr.x_adv - scene.inputs).max() <= eps + 1e-9
                    runs += 1
    assert runs == 40


def test_attack_respects_input_range(seg_model, seg_scene):
    tr = run_attack(seg_model, seg_scene, AttackConfig(method="pgd", epsilon=0.2,
                                                       alpha=0.05, iterations=4))
    assert tr.x_adv.min() >= 0.0
    assert tr.x_adv.max() <= 1.0


def test_vanishing_budget_leaves_the_input_unchanged(seg_model, seg_scene):
    cfg = AttackConfig(method="pgd", epsilon=1e-12, iterations=3)
    tr = run_attack(seg_model, seg_scene, cfg)
    assert np.abs(tr.x_adv - seg_scene.inputs).max() <= 1e-12


def test_pgd_ascends_the_loss(seg_model, seg_scene):
    cfg = AttackConfig(method="pgd", epsilon=0.1, alpha=0.01, iterations=8, seed=4)
    tr = run_attack(seg_model, seg_scene, cfg)
    assert tr.losses[-1] > tr.losses[0]


# --------------------------------------------------------------------------
# reductions to plain pgd


def test_fgsm_equals_single_step_pgd(seg_model, seg_scene):
    eps = 0.04
    a = run_attack(seg_model, seg_scene, AttackConfig(method="fgsm", epsilon=eps))
    b = run_attack(seg_model, seg_scene,
                   AttackConfig(method="pgd", epsilon=eps, alpha=eps, iterations=1,
                                random_init=False))
    assert a.x_adv.tobytes() == b.x_adv.tobytes()


def test_uniform_cossim_reduces_to_pgd(seg_model, seg_scene):
    base = dict(epsilon=0.03, alpha=0.01, iterations=5, seed=7)
    a = run_attack(seg_model, seg_scene,
                   AttackConfig(method="cospgd", force_cossim=0.7, **base))
    b = run_attack(seg_model, seg_scene, AttackConfig(method="pgd", **base))
    assert a.x_adv.tobytes() == b.x_adv.tobytes()


def test_half_lambda_segpgd_reduces_to_pgd(seg_model, seg_scene):
    base = dict(epsilon=0.03, alpha=0.01, iterations=5, seed=8)
    a = run_attack(seg_model, seg_scene,
                   AttackConfig(method="segpgd", force_segpgd_lambda=0.5, **base))
    b = run_attack(seg_model, seg_scene, AttackConfig(method="pgd", **base))
    assert a.x_adv.tobytes() == b.x_adv.tobytes()


def test_real_weightings_are_not_benign(seg_model, seg_scene):
    base = dict(epsilon=0.03, alpha=0.01, iterations=5, seed=9)
    pgd = run_attack(seg_model, seg_scene, AttackConfig(method="pgd", **base))
    cos = run_attack(seg_model, seg_scene, AttackConfig(method="cospgd", **base))
    seg = run_attack(seg_model, seg_scene, AttackConfig(method="segpgd", **base))
    assert cos.x_adv.tobytes() != pgd.x_adv.tobytes()
    assert seg.x_adv.tobytes() != pgd.x_adv.tobytes()
