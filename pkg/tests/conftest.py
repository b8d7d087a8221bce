import numpy as np
import pytest

from otel.metrics.custom_metrics_manager import CustomMetricsManager
from setlist.catalog import ReferenceTrack
from setlist.features import PcpMatrix


def random_pcp(rng: np.random.Generator, n_frames: int, frame_rate_hz: float = 10.0) -> PcpMatrix:
    return PcpMatrix(rng.uniform(size=(n_frames, 12)), frame_rate_hz)


def reference(track_id: str, matrix: PcpMatrix) -> ReferenceTrack:
    return ReferenceTrack(track_id, matrix, None, f"Artist of {track_id}", f"Title of {track_id}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def metric_reader():
    """A fresh CustomMetricsManager singleton reading into memory."""
    from opentelemetry.sdk.metrics.export import InMemoryMetricReader

    CustomMetricsManager._instance = None
    reader = InMemoryMetricReader()
    manager = CustomMetricsManager()
    manager.init("setlist_test", metric_readers=[reader])
    yield reader
    CustomMetricsManager._instance = None


def collect_points(reader) -> dict:
    """Metric name -> list of data points."""
    points = {}
    data = reader.get_metrics_data()
    if data is None:
        return points
    for resource_metrics in data.resource_metrics:
        for scope_metrics in resource_metrics.scope_metrics:
            for metric in scope_metrics.metrics:
                points.setdefault(metric.name, []).extend(metric.data.data_points)
    return points
