import numpy as np
import pytest

from sgreason.core import Box
from sgreason.datagen import GenSpec, default_vocabulary, gen_dataset
from sgreason.exec_neural import ExecutorParams
from sgreason.program import parse_program
from sgreason.scene_graph import one_hot_encode, perturb_encode
from sgreason.training import (
    NPARAMS,
    PointingSup,
    TrainConfig,
    generate_supervision,
    grad,
    grad_at,
    pack_params,
    sample_loss,
    teacher_forced_trace,
    train,
    unpack_params,
)

VOCAB = default_vocabulary()


class TestPacking:
    def test_round_trip(self):
        p = ExecutorParams(
            alpha=0.63,
            psi=np.linspace(-1, 1, 8),
            phi=np.linspace(1, -1, 8),
            calib={"exist": (1.2, -0.3), "verify": (0.8, 0.4)},
        )
        q = unpack_params(pack_params(p), p)
        assert q.alpha == pytest.approx(p.alpha)
        assert np.allclose(q.psi, p.psi)
        assert np.allclose(q.phi, p.phi)
        assert q.calib["verify"] == pytest.approx(p.calib["verify"])
        # non-trainable knobs come from the template
        assert q.pointing_threshold == p.pointing_threshold
        assert q.topk == p.topk

    def test_vector_length(self):
        assert len(pack_params(ExecutorParams())) == NPARAMS


class TestSupervision:
    def test_identity_boxes(self, scene):
        program = parse_program(
            "0: filter(object, dog); 1: filter(color, red) [0]; 2: query(material) [1]",
            VOCAB,
        )
        sup = generate_supervision(program, scene, scene.boxes, VOCAB)
        start = sup.steps[0]
        assert isinstance(start, PointingSup)
        assert start.input_sets[0] == (0, 1, 2, 3)
        assert start.labels == (0, 0, 1, 1)
        assert sup.steps[1].output_indices == (2,)
        assert sup.answer == "glass"

    def test_jittered_boxes_match_by_iou(self, scene):
        jittered = [
            Box(min(b.x1 + 0.02, b.x2 - 0.01), b.y1, b.x2, b.y2) for b in scene.boxes
        ]
        program = parse_program("0: filter(object, dog); 1: exist [0]", VOCAB)
        sup = generate_supervision(program, scene, jittered, VOCAB)
        assert sup.steps[0].labels == (0, 0, 1, 1)

    def test_unmatched_gt_objects_drop_out(self, scene):
        # only one detected box, overlapping gt object 0
        detected = [scene.boxes[0]]
        program = parse_program("0: filter(object, man); 1: exist [0]", VOCAB)
        sup = generate_supervision(program, scene, detected, VOCAB)
        assert sup.steps[0].labels == (1,)


class TestGradient:
    def _sample(self, seed=0):
        recs = gen_dataset(GenSpec(seed=4, num_scenes=3, questions_per_scene=2), VOCAB)
        r = recs[seed % len(recs)]
        g = perturb_encode(r.graph_gt, VOCAB, noise_sd=1.5, flip_rate=0.1, seed=seed)
        sup = generate_supervision(r.program, r.graph_gt, g.boxes, VOCAB)
        return r.program, g, sup

    def test_analytic_matches_finite_difference(self):
        rng = np.random.default_rng(1)
        batch = [self._sample(i) for i in range(3)]
        params = ExecutorParams(
            alpha=0.6, psi=rng.normal(0, 0.2, 8), phi=rng.normal(0, 0.2, 8)
        )
        vec = pack_params(params)
        _, g = grad_at(vec, batch, VOCAB)
        h = 1e-5
        for i in range(NPARAMS):
            vp, vm = vec.copy(), vec.copy()
            vp[i] += h
            vm[i] -= h
            fd = (grad_at(vp, batch, VOCAB)[0] - grad_at(vm, batch, VOCAB)[0]) / (2 * h)
            denom = max(abs(fd), abs(g[i]))
            if denom > 1e-7:
                assert abs(fd - g[i]) / denom < 1e-4, f"param {i}"

    def test_grad_of_empty_batch_is_zero(self):
        loss, g = grad(ExecutorParams(), [], VOCAB)
        assert loss == 0.0 and np.all(g == 0)


class TestTraining:
    def _samples(self, n_scenes=20):
        recs = gen_dataset(GenSpec(seed=9, num_scenes=n_scenes, questions_per_scene=3), VOCAB)
        out = []
        for k, r in enumerate(recs):
            g = perturb_encode(r.graph_gt, VOCAB, noise_sd=1.5, flip_rate=0.0, seed=k)
            out.append((r.program, g, generate_supervision(r.program, r.graph_gt, g.boxes, VOCAB)))
        return out

    def test_loss_decreases(self):
        samples = self._samples()
        _, curve = train(
            ExecutorParams(), samples, TrainConfig(0.5, 60, 16, seed=0), VOCAB
        )
        assert curve[-1] < curve[0] * 0.8

    def test_deterministic(self):
        samples = self._samples(8)
        cfg = TrainConfig(0.5, 25, 8, seed=3)
        p1, c1 = train(ExecutorParams(), samples, cfg, VOCAB)
        p2, c2 = train(ExecutorParams(), samples, cfg, VOCAB)
        assert c1 == c2
        assert np.array_equal(p1.psi, p2.psi)
        assert p1.alpha == p2.alpha

    def test_alpha_stays_in_range(self):
        samples = self._samples(8)
        p, _ = train(ExecutorParams(), samples, TrainConfig(2.0, 40, 8, seed=0), VOCAB)
        assert 0.0 < p.alpha <= 1.0


class TestTeacherForcedTrace:
    def test_exact_params_reproduce_answer(self, scene):
        program = parse_program(
            "0: filter(object, dog); 1: filter(color, red) [0]; 2: query(material) [1]",
            VOCAB,
        )
        graph = one_hot_encode(scene, VOCAB)
        sup = generate_supervision(program, scene, graph.boxes, VOCAB)
        trace = teacher_forced_trace(program, graph, sup, VOCAB, ExecutorParams(alpha=1.0))
        assert trace.answer == "glass"

    def test_sample_loss_finite(self, scene):
        program = parse_program("0: filter(object, dog); 1: exist [0]", VOCAB)
        graph = one_hot_encode(scene, VOCAB)
        sup = generate_supervision(program, scene, graph.boxes, VOCAB)
        assert np.isfinite(sample_loss(ExecutorParams(), program, graph, sup, VOCAB))
