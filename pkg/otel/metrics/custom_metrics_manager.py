from typing import Sequence


class CustomMetricsManager:
    """
    A manager class for the custom OpenTelemetry metrics of the setlist pipeline and its CLI.

    This class is implemented as a singleton, ensuring that metrics are only initialized once per process.

    Attributes:
        _initialized (bool): Indicates whether the manager has been initialized.
        _meter (Optional[Meter]): The OpenTelemetry meter used to record metrics.
        _pipeline_metrics_manager (Optional[PipelineMetricsManager]): Metrics of the identification stages.
        _command_metrics_manager (Optional[CommandMetricsManager]): Metrics of CLI command invocations.
    """
    _instance = None
    _lock = None

    def __new__(cls):
        if cls._instance is None:
            import threading
            if cls._lock is None:
                cls._lock = threading.Lock()
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super(CustomMetricsManager, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        if not hasattr(self, '_initialized'):
            self._initialized = False
            self._meter = None
            self._meter_provider = None
            self._pipeline_metrics_manager = None
            self._command_metrics_manager = None
            self.app_name = None

    def init(self, application_name: str, metric_readers: Sequence = ()) -> None:
        """
        Initialize the CustomMetricsManager with a specific application name.

        This method sets up the OpenTelemetry meter provider and creates a meter
        for recording metrics. It must be called before any other methods in this class.

        Args:
            application_name (str): The name of the application, used to create the meter.
            metric_readers (Sequence): Extra metric readers for the meter provider, e.g. an in-memory reader.

        Raises:
            ImportError: If the required OpenTelemetry libraries are not installed.
        """
        if not self._initialized:
            try:
                from opentelemetry import metrics
                from opentelemetry.sdk.metrics import MeterProvider
            except ImportError as e:
                missing_package = str(e).split("'")[-2]
                raise ImportError(
                    f"The required library '{missing_package}' is not installed. "
                    f"Please install it using the following command:\n\n"
                    f"pip install opentelemetry-sdk"
                ) from e

            self._meter_provider = MeterProvider(metric_readers=list(metric_readers))
            metrics.set_meter_provider(self._meter_provider)
            self.app_name = application_name
            self._meter = self._meter_provider.get_meter(application_name)
            self._initialized = True

    def is_initialized(self) -> bool:
        return self._initialized

    def get_meter(self):
        """
        Get the meter instance.
        """
        return self._meter

    def get_or_create_pipeline_metrics_manager(self):
        """
        Get the pipeline metrics manager instance, creating it on first use.
        """
        if not self._initialized:
            raise RuntimeError("CustomMetricsManager is not initialized. Call init first.")

        if self._pipeline_metrics_manager is None:
            from .pipeline_metrics_manager import PipelineMetricsManager
            self._pipeline_metrics_manager = PipelineMetricsManager(self._meter, self.app_name)

        return self._pipeline_metrics_manager

    def register_command_metrics(self, service_name: str):
        """
        Register the CLI for command metrics collection.

        Args:
            service_name (str): The name of the service to associate with the metrics.

        Raises:
            RuntimeError: If the manager has not been initialized.
        """
        if not self._initialized:
            raise RuntimeError("CustomMetricsManager is not initialized. Call init first.")

        if self._command_metrics_manager is None:
            from .command_metrics_manager import CommandMetricsManager
            self._command_metrics_manager = CommandMetricsManager(self._meter, service_name)

        return self._command_metrics_manager

    def get_command_metrics_manager(self):
        return self._command_metrics_manager

    def get_pipeline_metrics_manager(self):
        return self._pipeline_metrics_manager
