import time

from .otel_global_attributes import get_global_attributes


class CommandMetricsManager:
    """
    A manager class for CLI command metrics using OpenTelemetry.

    This class sets up the command count and command duration metrics and records them
    around each command through ``track``.

    Attributes:
        meter: The OpenTelemetry meter used for creating and recording metrics.
    """

    def __init__(self, meter, service_name: str):
        self.meter = meter
        self.service_name = service_name
        self._setup()

    def _setup(self):
        self.commands_received_count = self.meter.create_counter(
            name="setlist_commands_received_count",
            description="Total count of CLI commands by command name.",
        )

        self.commands_duration_milliseconds = self.meter.create_histogram(
            name="setlist_commands_duration_milliseconds",
            description="Histogram of CLI command processing time by command (in milliseconds).",
        )

    def get_attributes(self, command: str, extra_attributes: dict = None) -> dict:
        attributes = get_global_attributes()
        attributes.update({
            "command": command,
            "service_name": self.service_name,
        })
        if extra_attributes:
            attributes.update(extra_attributes)
        return attributes

    def track(self, command: str) -> "CommandTracker":
        return CommandTracker(self, command)


class CommandTracker:
    """
    Context manager counting one command invocation and recording its duration, exit code and exception type.
    """

    def __init__(self, metrics_manager: CommandMetricsManager, command: str):
        self.metrics_manager = metrics_manager
        self.command = command
        self.exit_code = 0
        self._before_time = None

    def __enter__(self):
        self.metrics_manager.commands_received_count.add(1, self.metrics_manager.get_attributes(self.command))
        self._before_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        from opentelemetry import trace

        time_in_milliseconds = (time.perf_counter() - self._before_time) * 1000

        # Retrieve trace id for linking metrics to traces
        span = trace.get_current_span()
        trace_id = trace.format_trace_id(span.get_span_context().trace_id)

        exit_code = self.exit_code
        if exc_type is not None:
            exit_code = getattr(exc_value, "exit_code", 2)

        extra_attributes = {
            "TraceID": trace_id,
            "exit_code": exit_code,
            "exception_type": exc_type.__name__ if exc_type is not None else "none",
        }
        self.metrics_manager.commands_duration_milliseconds.record(
            time_in_milliseconds,
            self.metrics_manager.get_attributes(self.command, extra_attributes)
        )
        return False
