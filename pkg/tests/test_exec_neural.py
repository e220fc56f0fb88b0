import dataclasses

import numpy as np
import pytest

from sgreason.datagen import default_vocabulary
from sgreason.exec_neural import (
    ExecutorParams,
    box_features,
    exact_params,
    exec_neural,
    load_params,
    save_params,
)
from sgreason.exec_symbolic import exec_symbolic
from sgreason.errors import SgError
from sgreason.program import parse_program
from sgreason.scene_graph import one_hot_encode, perturb_encode

VOCAB = default_vocabulary()


def nrun(text, graph, params):
    return exec_neural(parse_program(text, VOCAB), graph, VOCAB, params)


class TestParams:
    def test_defaults(self):
        p = ExecutorParams()
        assert p.alpha == 0.5
        assert p.pointing_threshold == 5.0
        assert p.topk == 3
        assert np.all(p.psi == 0) and np.all(p.phi == 0)
        assert p.calib["exist"] == (1.0, 0.0)

    def test_validation(self):
        with pytest.raises(SgError):
            ExecutorParams(alpha=1.5)
        with pytest.raises(SgError):
            ExecutorParams(relate_reduce="median")
        with pytest.raises(SgError):
            ExecutorParams(topk=0)

    def test_save_load_round_trip(self, tmp_path):
        p = ExecutorParams(alpha=0.7, psi=np.arange(8.0), calib={
            "exist": (1.5, -0.2), "verify": (0.9, 0.1)})
        path = tmp_path / "params.json"
        save_params(p, path)
        q = load_params(path)
        assert q.alpha == p.alpha
        assert np.allclose(q.psi, p.psi)
        assert q.calib == p.calib

    def test_box_features(self):
        from sgreason.core import Box
        f = box_features(Box(0.1, 0.2, 0.5, 0.6))
        assert np.allclose(f, [0.1, 0.2, 0.5, 0.6, 0.4, 0.4, 0.16])


class TestExactMode:
    def test_matches_symbolic_on_handcrafted_scene(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        texts = [
            "0: filter(object, dog); 1: filter(color, red) [0]; 2: query(material) [1]",
            "0: filter(object, man); 1: filter(object, none); "
            "2: relate_object(holding) [0, 1]; 3: query(object) [2]",
            "0: filter(object, car); 1: choose(material, metal|wood) [0]",
            "0: filter(object, man); 1: filter(color, red); 2: common(color) [0, 1]",
            "0: filter(object, dog); 1: exist [0]; 2: not [1]",
            "0: filter(object, dog); 1: filter(position, right) [0]; 2: query(color) [1]",
        ]
        for text in texts:
            program = parse_program(text, VOCAB)
            ts = exec_symbolic(program, scene, VOCAB)
            tn = exec_neural(program, graph, VOCAB, exact_params())
            assert tn.answer == ts.answer, text
            for s_set, n_set in zip(ts.referred_sets(), tn.selected_sets()):
                if s_set is not None:
                    assert frozenset(n_set) == s_set, text

    def test_boolean_terminal_yes_no(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        assert nrun("0: filter(object, bird); 1: exist [0]", graph, exact_params()).answer == "no"


class TestSelection:
    def test_threshold_gates_selection(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        # untrained defaults: match score = 10 * 0.5 * alpha = 2.5 < 5.0
        t = nrun("0: filter(object, dog); 1: exist [0]", graph, ExecutorParams())
        assert len(t.steps[0].indices) == 1  # argmax fallback

    def test_topk_caps_selection(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        params = dataclasses.replace(exact_params(), topk=1)
        t = nrun("0: filter(object, dog); 1: exist [0]", graph, params)
        assert len(t.steps[0].indices) == 1

    def test_fallback_never_empty(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        t = nrun("0: filter(object, bird); 1: exist [0]", graph, exact_params())
        assert len(t.steps[0].indices) == 1  # argmax fallback on empty match

    def test_final_attention_zero_for_unselected(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        t = nrun(
            "0: filter(object, dog); 1: filter(color, red) [0]; 2: query(material) [1]",
            graph, exact_params(),
        )
        selected = set(t.steps[1].indices)
        for i in range(graph.num_objects):
            if i not in selected:
                assert t.final_attention[i] == 0.0


class TestAnswerDistribution:
    def test_query_distribution_normalized(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        t = nrun(
            "0: filter(object, car); 1: query(color) [0]", graph, exact_params()
        )
        assert t.answer_distribution is not None
        assert np.isclose(np.sum(t.answer_distribution), 1.0)
        assert t.answer_labels[int(np.argmax(t.answer_distribution))] == t.answer

    def test_choose_prefers_held_category(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        t = nrun(
            "0: filter(object, car); 1: choose(color, red|blue) [0]",
            graph, exact_params(),
        )
        assert t.answer == "blue"


class TestRelateReduce:
    def test_modes_agree_on_one_hot_singletons(self, scene):
        graph = one_hot_encode(scene, VOCAB)
        text = ("0: filter(object, man); 1: filter(object, none); "
                "2: relate_object(holding) [0, 1]; 3: query(object) [2]")
        exact = exec_neural(parse_program(text, VOCAB), graph, VOCAB, exact_params())
        soft = exec_neural(
            parse_program(text, VOCAB), graph, VOCAB,
            dataclasses.replace(exact_params(), relate_reduce="softmax_avg"),
        )
        assert exact.answer == soft.answer == "dog"


class TestNoiseRobustnessOfExactMode:
    def test_small_noise_keeps_answers(self, scene):
        # logit noise well below the +/-10 encoding cannot change signs
        graph = perturb_encode(scene, VOCAB, noise_sd=0.5, flip_rate=0.0, seed=3)
        program = parse_program(
            "0: filter(object, dog); 1: filter(color, red) [0]; 2: query(material) [1]",
            VOCAB,
        )
        t = exec_neural(program, graph, VOCAB, exact_params())
        assert t.answer == "glass"
