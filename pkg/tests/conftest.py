import pytest

from sgreason.core import Box
from sgreason.datagen import default_vocabulary
from sgreason.scene_graph import Relation, SceneObject, SymbolicSceneGraph


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def scene(vocab):
    """Hand-built scene with known answers.

    0: red wood small man   (top-left)
    1: blue metal large car (top-right)
    2: red glass large dog  (bottom-left)
    3: blue wood small dog  (bottom-right)
    relations: man holding cup? no cup -- man above dog(2) is geometric;
    edges chosen explicitly below.
    """
    a = vocab.attribute_id
    objs = (
        SceneObject(Box(0.05, 0.05, 0.25, 0.25), vocab.object_id("man"),
                    frozenset({a("red"), a("wood"), a("small")})),
        SceneObject(Box(0.75, 0.05, 0.95, 0.30), vocab.object_id("car"),
                    frozenset({a("blue"), a("metal"), a("large")})),
        SceneObject(Box(0.05, 0.70, 0.30, 0.95), vocab.object_id("dog"),
                    frozenset({a("red"), a("glass"), a("large")})),
        SceneObject(Box(0.70, 0.70, 0.95, 0.95), vocab.object_id("dog"),
                    frozenset({a("blue"), a("wood"), a("small")})),
    )
    p = vocab.predicate_id
    rels = frozenset({
        Relation(0, p("above"), 2),
        Relation(0, p("left-of"), 1),
        Relation(3, p("near"), 2),
        Relation(0, p("holding"), 3),
    })
    return SymbolicSceneGraph(objs, rels)
