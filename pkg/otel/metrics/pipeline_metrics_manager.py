from .otel_global_attributes import get_global_attributes


class PipelineMetricsManager:
    """
    A manager class for the identification pipeline metrics using OpenTelemetry.

    Attributes:
        meter: The OpenTelemetry meter used for creating and recording metrics.
    """

    def __init__(self, meter, app_name: str):
        """
        Initializes the PipelineMetricsManager with the provided OpenTelemetry meter.

        Args:
            meter: An OpenTelemetry meter instance for creating metrics.
            app_name (str): The application name attached to every data point.
        """
        self.meter = meter
        self.app_name = app_name
        self._setup()

    def _setup(self):
        """
        Sets up the counters and histograms tracking windows, distance computations and segments.
        """
        self.windows_processed_count = self.meter.create_counter(
            name="setlist_windows_processed_count",
            description="Total count of query windows matched against the reference catalog.",
        )

        self.distance_computations_count = self.meter.create_counter(
            name="setlist_distance_computations_count",
            description="Total count of window-vs-reference distance computations.",
        )

        self.segments_emitted_count = self.meter.create_counter(
            name="setlist_segments_emitted_count",
            description="Total count of consolidated segments by classifier decision.",
        )

        self.stage_duration_milliseconds = self.meter.create_histogram(
            name="setlist_stage_duration_milliseconds",
            description="Histogram of pipeline stage processing time by stage (in milliseconds).",
        )

    def _get_attributes(self, backend: str, extra_attributes: dict = None) -> dict:
        attributes = get_global_attributes()
        attributes.update({
            "backend": backend,
            "app_name": self.app_name,
        })
        if extra_attributes:
            attributes.update(extra_attributes)
        return attributes

    def increment_windows_processed(self, backend: str, count: int = 1):
        self.windows_processed_count.add(count, self._get_attributes(backend))

    def increment_distance_computations(self, backend: str, count: int):
        self.distance_computations_count.add(count, self._get_attributes(backend))

    def increment_segments_emitted(self, backend: str, accepted: bool, count: int = 1):
        self.segments_emitted_count.add(count, self._get_attributes(backend, {"accepted": accepted}))

    def record_stage_duration_milliseconds(self, backend: str, stage: str, duration: float):
        """
        Records the duration of one pipeline stage.
        """
        self.stage_duration_milliseconds.record(duration, self._get_attributes(backend, {"stage": stage}))
