from concurrent.futures import Executor
from typing import Any, Callable, Iterable, List


def map_with_otel_context(executor: Executor, func: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
    """
    Map ``func`` over ``items`` in the executor while preserving the current tracing context.

    Each worker call attaches the caller's OpenTelemetry context, so spans opened by ``func``
    become children of the caller's span. Results come back in input order.

    Args:
        executor (Executor): The executor running the calls.
        func (Callable[[Any], Any]): The function applied to each item.
        items (Iterable[Any]): The inputs.

    Returns:
        List[Any]: The results, in the order of ``items``.

    Raises:
        ImportError: If the required OpenTelemetry libraries are not installed.
    """
    # Check for required libraries
    try:
        from opentelemetry.context import attach, detach, get_current
    except ImportError as e:
        missing_package = str(e).split("'")[-2]
        raise ImportError(
            f"The required library '{missing_package}' is not installed. "
            f"Please install it using the following command:\n\n"
            f"pip install opentelemetry-api"
        ) from e

    # Capture the current tracing context
    context = get_current()

    def wrapper(item: Any) -> Any:
        token = attach(context)
        try:
            return func(item)
        finally:
            detach(token)

    return list(executor.map(wrapper, items))
