from concurrent.futures import ThreadPoolExecutor

import pytest
from opentelemetry import trace

from otel import otel_utils
from otel.metrics.custom_metrics_manager import CustomMetricsManager
from otel.metrics.otel_global_attributes import get_global_attributes
from otel.utils.tracing_executor import map_with_otel_context
from setlist.cli import run
from tests.conftest import collect_points

FLAG_PREDICATES = [
    otel_utils.is_app_tracing_enabled,
    otel_utils.is_otel_log_export_enabled,
    otel_utils.is_custom_metrics_enabled,
    otel_utils.is_pipeline_metrics_enabled,
    otel_utils.is_command_metrics_enabled,
    otel_utils.is_pyroscope_enabled,
]


@pytest.fixture
def fresh_flags():
    for predicate in FLAG_PREDICATES:
        predicate.cache_clear()
    yield
    for predicate in FLAG_PREDICATES:
        predicate.cache_clear()


class TestFlags:
    def test_all_disabled_by_default(self, monkeypatch, fresh_flags):
        for name in ("APP_TRACING_ENABLED", "OTEL_ENABLE_CUSTOM_METRICS", "OTEL_ENABLE_PYROSCOPE"):
            monkeypatch.delenv(name, raising=False)
        assert not any(predicate() for predicate in FLAG_PREDICATES)

    def test_metrics_need_tracing(self, monkeypatch, fresh_flags):
        monkeypatch.setenv("APP_TRACING_ENABLED", "false")
        monkeypatch.setenv("OTEL_ENABLE_CUSTOM_METRICS", "true")
        monkeypatch.setenv("OTEL_ENABLE_PIPELINE_METRICS", "true")
        assert not otel_utils.is_custom_metrics_enabled()
        assert not otel_utils.is_pipeline_metrics_enabled()

    def test_pipeline_metrics_enabled(self, monkeypatch, fresh_flags):
        monkeypatch.setenv("APP_TRACING_ENABLED", "TRUE")
        monkeypatch.setenv("OTEL_ENABLE_CUSTOM_METRICS", "true")
        monkeypatch.setenv("OTEL_ENABLE_PIPELINE_METRICS", "true")
        assert otel_utils.is_pipeline_metrics_enabled()
        assert not otel_utils.is_command_metrics_enabled()

    def test_service_name(self, monkeypatch):
        monkeypatch.delenv("APP_NAME", raising=False)
        assert otel_utils.get_service_name() == "setlist_id"
        monkeypatch.setenv("APP_NAME", "setlist_batch")
        assert otel_utils.get_service_name() == "setlist_batch"

    def test_profiling_disabled(self, monkeypatch, fresh_flags):
        import logging

        monkeypatch.delenv("OTEL_ENABLE_PYROSCOPE", raising=False)
        assert otel_utils.start_profiling("setlist_id", logging.getLogger("test")) is False


class TestGlobalAttributes:
    def test_disabled(self, monkeypatch):
        monkeypatch.delenv("SET_GLOBAL_OTEL_ATTRIBUTES", raising=False)
        assert get_global_attributes() == {}

    def test_enabled(self, monkeypatch):
        monkeypatch.setenv("SET_GLOBAL_OTEL_ATTRIBUTES", "true")
        monkeypatch.setenv("SETLIST_RUN_ID", "run-7")
        monkeypatch.delenv("SETLIST_DATASET", raising=False)
        attributes = get_global_attributes()
        assert attributes["run_id"] == "run-7"
        assert attributes["dataset"] == "unknown"


class TestManagers:
    def test_uninitialized_managers_are_none(self):
        CustomMetricsManager._instance = None
        try:
            assert otel_utils.get_pipeline_metrics_manager() is None
            assert otel_utils.get_command_metrics_manager() is None
            with pytest.raises(RuntimeError):
                CustomMetricsManager().get_or_create_pipeline_metrics_manager()
        finally:
            CustomMetricsManager._instance = None

    def test_singleton(self, metric_reader):
        assert CustomMetricsManager() is CustomMetricsManager()
        assert otel_utils.get_pipeline_metrics_manager() is None
        pipeline = CustomMetricsManager().get_or_create_pipeline_metrics_manager()
        assert otel_utils.get_pipeline_metrics_manager() is pipeline


class TestCommandMetrics:
    def test_failed_command(self, metric_reader, tmp_path):
        CustomMetricsManager().register_command_metrics("setlist_test")
        (tmp_path / "results").mkdir()
        (tmp_path / "manifest.txt").write_text("")
        code = run(["evaluate", "--results-dir", str(tmp_path / "results"), "--manifest", str(tmp_path / "manifest.txt")])
        assert code == 2

        points = collect_points(metric_reader)
        (received,) = points["setlist_commands_received_count"]
        assert received.value == 1
        assert received.attributes["command"] == "evaluate"
        (duration,) = points["setlist_commands_duration_milliseconds"]
        assert duration.attributes["exit_code"] == 2
        assert duration.attributes["exception_type"] == "MissingResults"

    def test_successful_command(self, metric_reader, tmp_path):
        CustomMetricsManager().register_command_metrics("setlist_test")
        code = run(["--frame-rate", "2", "synth", "--n-refs", "3", "--n-concerts", "1", "--ref-duration", "30", "40",
                    "--songs-per-concert", "2", "2", "--out-dir", str(tmp_path / "data")])
        assert code == 0
        (duration,) = collect_points(metric_reader)["setlist_commands_duration_milliseconds"]
        assert duration.attributes["exit_code"] == 0
        assert duration.attributes["exception_type"] == "none"
        assert duration.attributes["service_name"] == "setlist_test"

    def test_usage_errors_are_not_counted(self, metric_reader):
        CustomMetricsManager().register_command_metrics("setlist_test")
        assert run(["identify", "--bogus"]) == 1
        assert "setlist_commands_received_count" not in collect_points(metric_reader)


class TestTracingExecutor:
    def test_keeps_order(self):
        with ThreadPoolExecutor(max_workers=4) as executor:
            assert map_with_otel_context(executor, lambda x: x * x, range(20)) == [x * x for x in range(20)]

    def test_propagates_the_current_span(self):
        from opentelemetry.sdk.trace import TracerProvider

        tracer = TracerProvider().get_tracer(__name__)
        with tracer.start_as_current_span("parent") as parent:
            expected = parent.get_span_context().trace_id
            with ThreadPoolExecutor(max_workers=2) as executor:
                seen = map_with_otel_context(
                    executor, lambda _: trace.get_current_span().get_span_context().trace_id, range(4),
                )
        assert seen == [expected] * 4
