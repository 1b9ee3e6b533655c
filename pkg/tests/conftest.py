import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sgselfsup.geometry import BoundingBox  # noqa: E402
from sgselfsup.model import PairBatch, build_semantic_prior, init_params  # noqa: E402
from sgselfsup.synth import SynthConfig, generate  # noqa: E402


def random_box(rng, W=100.0, H=100.0, min_size=1.0):
    w = rng.uniform(min_size, W * 0.6)
    h = rng.uniform(min_size, H * 0.6)
    return BoundingBox(rng.uniform(0, W - w), rng.uniform(0, H - h), w, h)


def random_batch(rng, n, n_classes, d_vis, n_predicates, labelled=True):
    gt = rng.integers(0, n_predicates, n) if labelled else np.full(n, -1)
    return PairBatch(rng.normal(size=(n, 22)), rng.normal(size=(n, 3 * d_vis)),
                     rng.integers(0, n_classes, n), rng.integers(0, n_classes, n), gt,
                     rng.integers(0, 2, (n, 2)).astype(float), rng.uniform(size=n),
                     rng.uniform(size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(n_images=40, seed=3))


@pytest.fixture(scope="session")
def small_params(small_synth):
    ds = small_synth.dataset
    return init_params(ds.n_classes, ds.n_predicates, ds.d_vis, seed=7,
                       semantic_logprior=build_semantic_prior(ds))


def random_metric_instance(rng, mode, max_objects=5, max_predicates=8, n_classes=3):
    """A GT annotation plus predictions for the metric oracle.

    Returns ``(ann, predictions, oracle_objects, oracle_preds)`` where the
    oracle views are plain tuples/dicts.
    """
    from sgselfsup.data import ImageMeta, ObjectInstance, SceneGraphAnnotation
    from sgselfsup.evaluation import RelationshipPrediction

    n = int(rng.integers(2, max_objects + 1))
    R = int(rng.integers(2, max_predicates + 1))
    objs = tuple(ObjectInstance(random_box(rng, min_size=5.0), int(rng.integers(n_classes)))
                 for _ in range(n))
    pairs = [(s, o) for s in range(n) for o in range(n) if s != o]
    n_trip = int(rng.integers(0, len(pairs) + 1))
    triplets = set()
    for _ in range(n_trip):
        s, o = pairs[int(rng.integers(len(pairs)))]
        triplets.add((s, int(rng.integers(R)), o))
    ann = SceneGraphAnnotation(ImageMeta("img", 100, 100), objs, tuple(sorted(triplets)))

    if mode == "sgdet":
        m = int(rng.integers(1, max_objects + 2))
        boxes, classes = [], []
        for _ in range(m):
            if rng.random() < 0.7:
                g = objs[int(rng.integers(n))]
                d = rng.normal(0, 0.15, 4) * np.array([g.box.w, g.box.h, g.box.w, g.box.h])
                w, h = max(g.box.w + d[2], 1.0), max(g.box.h + d[3], 1.0)
                boxes.append(BoundingBox(max(g.box.x + d[0], 0.0), max(g.box.y + d[1], 0.0), w, h))
                classes.append(g.class_id if rng.random() < 0.8 else int(rng.integers(n_classes)))
            else:
                boxes.append(random_box(rng, min_size=5.0))
                classes.append(int(rng.integers(n_classes)))
    else:
        boxes = [o.box for o in objs]
        classes = [o.class_id if mode == "predcls" or rng.random() < 0.7
                   else int(rng.integers(n_classes)) for o in objs]
    m = len(boxes)
    pconf = [1.0] * m if mode == "predcls" else [float(rng.choice([0.5, 0.75, 1.0]))
                                                  for _ in range(m)]
    preds, oracle_preds = [], []
    for s in range(m):
        for o in range(m):
            if s == o:
                continue
            # coarse grid so ties occur
            raw = rng.integers(1, 5, R).astype(float)
            p_rel = raw / raw.sum()
            preds.append(RelationshipPrediction("img", s, o, boxes[s], boxes[o], classes[s],
                                                classes[o], pconf[s], pconf[o], p_rel))
            oracle_preds.append({"sbox": tuple(boxes[s].as_array()),
                                 "obox": tuple(boxes[o].as_array()),
                                 "scls": classes[s], "ocls": classes[o],
                                 "psub": pconf[s], "pobj": pconf[o], "prel": p_rel.tolist()})
    oracle_objects = [(tuple(o.box.as_array()), o.class_id) for o in objs]
    return ann, preds, oracle_objects, oracle_preds


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
