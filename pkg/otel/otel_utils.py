import logging
import os
from functools import lru_cache

DEFAULT_APP_NAME = "setlist_id"
DEFAULT_PYROSCOPE_SERVER_ADDRESS = "http://localhost:4040"


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "false").lower() == "true"


@lru_cache
def is_app_tracing_enabled():
    return _env_flag("APP_TRACING_ENABLED")


@lru_cache
def is_otel_log_export_enabled():
    return is_app_tracing_enabled() and _env_flag("OTEL_ENABLE_LOG_EXPORT")


@lru_cache
def is_custom_metrics_enabled():
    return is_app_tracing_enabled() and _env_flag("OTEL_ENABLE_CUSTOM_METRICS")


@lru_cache
def is_pipeline_metrics_enabled():
    return is_custom_metrics_enabled() and _env_flag("OTEL_ENABLE_PIPELINE_METRICS")


@lru_cache
def is_command_metrics_enabled():
    return is_custom_metrics_enabled() and _env_flag("OTEL_ENABLE_COMMAND_METRICS")


@lru_cache
def is_pyroscope_enabled():
    return _env_flag("OTEL_ENABLE_PYROSCOPE")


def get_service_name() -> str:
    return os.environ.get("APP_NAME", DEFAULT_APP_NAME)


def setup_otel(service_name: str, logger: logging.Logger) -> None:
    """
    Sets up OpenTelemetry (OTEL) configurations: log export, custom metrics, pipeline metrics and command metrics.

    Pyroscope profiling is started separately by ``bench --profile`` through ``start_profiling``.

    Args:
        service_name (str): The name of the service to be used for OTEL configurations.
        logger (logging.Logger): The logger instance to be used for setting up OTEL logging.

    Returns:
        None
    """

    logger.info(f"Setting up OTEL configurations for service: {service_name}")

    if is_otel_log_export_enabled():
        logger.info("OTEL log export is enabled. Setting up OTEL logging handler.")
        from otel.utils.logging_handler import setup_otel_logging_handler
        setup_otel_logging_handler(logger, service_name)
    else:
        logger.info("OTEL log export is disabled.")

    if is_custom_metrics_enabled():
        logger.info("Custom metrics are enabled. Initializing CustomMetricsManager.")
        from otel.metrics.custom_metrics_manager import CustomMetricsManager
        custom_metrics_manager = CustomMetricsManager()
        custom_metrics_manager.init(service_name)

        if is_pipeline_metrics_enabled():
            logger.info("Pipeline metrics are enabled. Initializing PipelineMetricsManager.")
            custom_metrics_manager.get_or_create_pipeline_metrics_manager()
        else:
            logger.info("Pipeline metrics are disabled.")

        if is_command_metrics_enabled():
            logger.info("Command metrics are enabled. Registering command metrics.")
            custom_metrics_manager.register_command_metrics(service_name)
        else:
            logger.info("Command metrics are disabled.")
    else:
        logger.info("Custom metrics are disabled.")

    logger.info("OTEL setup completed.")


def start_profiling(service_name: str, logger: logging.Logger, tags: dict = None) -> bool:
    if not is_pyroscope_enabled():
        logger.info("Pyroscope profiling is disabled.")
        return False
    logger.info("Pyroscope profiling is enabled. Setting up Pyroscope collector.")
    from otel.utils.pyroscope_collector import enable_pyroscope
    server_address = os.environ.get("OTEL_PYROSCOPE_SERVER_ADDRESS", DEFAULT_PYROSCOPE_SERVER_ADDRESS)
    enable_pyroscope(service_name, server_address, tags=tags)
    return True


def get_pipeline_metrics_manager():
    """The pipeline metrics manager when pipeline metrics are enabled and initialized, else None."""
    from otel.metrics.custom_metrics_manager import CustomMetricsManager
    manager = CustomMetricsManager()
    if not manager.is_initialized():
        return None
    return manager.get_pipeline_metrics_manager()


def get_command_metrics_manager():
    from otel.metrics.custom_metrics_manager import CustomMetricsManager
    manager = CustomMetricsManager()
    if not manager.is_initialized():
        return None
    return manager.get_command_metrics_manager()
