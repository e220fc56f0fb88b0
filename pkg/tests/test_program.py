import json

import pytest

from sgreason.datagen import default_vocabulary
from sgreason.errors import ProgramSyntaxError, ProgramValidationError
from sgreason.program import (
    Operation,
    Program,
    enumerate_operation_space,
    parse_program,
    program_from_json_dict,
    program_to_json_dict,
    serialize_program,
    validate,
)

VOCAB = default_vocabulary()

GOOD = [
    "0: filter(object, streetlight); 1: filter(object, man); "
    "2: relate_subject(above) [0, 1]; 3: query(color) [2]",
    "0: filter(object, dog); 1: exist [0]",
    "0: filter(object, dog); 1: verify(color, red) [0]",
    "0: filter(object, dog); 1: choose(color, red|blue) [0]",
    "0: filter(object, dog); 1: filter(object, cat); 2: common(color) [0, 1]",
    "0: filter(object, dog); 1: exist [0]; 2: filter(object, cat); "
    "3: exist [2]; 4: and [1, 3]",
    "0: filter(object, dog); 1: exist [0]; 2: not [1]",
    "0: filter(position, left); 1: query(object) [0]",
    "0: filter(color, none); 1: query(material) [0]",
]


class TestParsing:
    @pytest.mark.parametrize("text", GOOD)
    def test_parse_serialize_round_trip(self, text):
        program = parse_program(text, VOCAB)
        assert parse_program(serialize_program(program), VOCAB) == program

    def test_relate_surface_forms(self):
        p = parse_program(GOOD[0], VOCAB)
        assert p.steps[2].operator == "relate"
        assert p.steps[2].concept == "subject"
        assert p.steps[2].category == "above"

    def test_choose_pair(self):
        p = parse_program(GOOD[3], VOCAB)
        assert p.steps[1].category == ("red", "blue")

    def test_filter_none_category(self):
        p = parse_program("0: filter(object, none); 1: exist [0]", VOCAB)
        assert p.steps[0].category is None

    def test_newline_separated(self):
        p = parse_program("0: filter(object, dog)\n1: exist [0]", VOCAB)
        assert len(p.steps) == 2

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "0: frobnicate(object, dog)",
            "1: filter(object, dog)",  # index must start at 0
            "0: filter(object, dog); 2: exist [0]",  # gap
            "0: filter(object)",  # missing category
            "0: choose(color, red) [0]",  # no pair
        ],
    )
    def test_syntax_errors(self, text):
        with pytest.raises(ProgramSyntaxError):
            parse_program(text, VOCAB)


class TestValidation:
    def test_collects_all_violations(self):
        program = Program([
            Operation("exist", deps=()),          # arity + start-step violation
            Operation("query", "color", deps=(0,)),  # dep is boolean
        ])
        violations = validate(program, VOCAB)
        assert len(violations) >= 2

    def test_forward_dependency(self):
        program = Program([
            Operation("filter", "object", "dog", (1,)),
            Operation("filter", "color", "red", ()),
        ])
        # step 0 depends on a later step; also two terminals result
        assert validate(program, VOCAB)

    def test_unknown_category(self):
        with pytest.raises(ProgramValidationError):
            parse_program("0: filter(object, unicorn); 1: exist [0]", VOCAB)

    def test_terminal_must_answer(self):
        with pytest.raises(ProgramValidationError):
            parse_program("0: filter(object, dog)", VOCAB)

    def test_boolean_ops_need_boolean_deps(self):
        with pytest.raises(ProgramValidationError):
            parse_program(
                "0: filter(object, dog); 1: filter(object, cat); 2: and [0, 1]", VOCAB
            )


class TestJson:
    @pytest.mark.parametrize("text", GOOD)
    def test_round_trip(self, text):
        program = parse_program(text, VOCAB)
        data = json.loads(json.dumps(program_to_json_dict(program)))
        assert program_from_json_dict(data, VOCAB) == program


class TestEnumeration:
    def test_deterministic(self):
        a = enumerate_operation_space(VOCAB)
        b = enumerate_operation_space(VOCAB)
        assert a == b

    def test_counts(self):
        ops = enumerate_operation_space(VOCAB)
        names = [o[0] for o in ops]
        # relate enumerates subject/object per non-background predicate
        n_preds = len(VOCAB.predicate_names) - 1
        assert names.count("relate") == 2 * n_preds
        for bare in ("exist", "and", "or", "not"):
            assert names.count(bare) == 1
        # every operator of the DSL appears
        assert set(names) == {
            "filter", "query", "exist", "verify", "common",
            "relate", "choose", "and", "or", "not",
        }
