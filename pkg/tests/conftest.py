import numpy as np
import pytest

from ocpose.dataset_io import (
    DetectionPose,
    GroundTruthEntry,
    GTKind,
    SigmaTable,
    coco_sigmas,
)
from ocpose.masks import BinaryMask


@pytest.fixture(scope="session")
def sigmas():
    return coco_sigmas()


def make_det(xy, conf=1.0, score=1.0, image_id=1, index=0):
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    c = np.broadcast_to(np.asarray(conf, dtype=np.float64), (len(xy),))
    return DetectionPose(image_id, np.column_stack([xy, c]), float(score), index)


def make_pose(xy, vis=2, area=100.0**2, ann_id=None):
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    v = np.broadcast_to(np.asarray(vis, dtype=np.float64), (len(xy),))
    return GroundTruthEntry(GTKind.POSE, float(area), None, keypoints=np.column_stack([xy, v]), ann_id=ann_id)


def make_region(array, kind=GTKind.MASK, area=None, ann_id=None, bbox=None):
    mask = BinaryMask.from_array(np.asarray(array, dtype=bool))
    area = float(area if area is not None else max(mask.area, 1))
    return GroundTruthEntry(kind, area, bbox, mask=mask, ann_id=ann_id)


def one_joint(k=0.1):
    return SigmaTable((k,))


def write_pair(directory, scenes, dt_name="dt.json", num_keypoints=17):
    """Write scenes as a COCO GT/results pair; returns both paths."""
    from ocpose.dataset_io import dump_detections, dump_ground_truth, write_json

    gt, dt = directory / "gt.json", directory / dt_name
    write_json(dump_ground_truth(scenes, num_keypoints), gt)
    write_json(dump_detections(scenes), dt)
    return gt, dt


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
