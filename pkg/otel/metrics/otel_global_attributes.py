import os

def get_global_attributes():
    if os.getenv("SET_GLOBAL_OTEL_ATTRIBUTES") is not None and os.getenv("SET_GLOBAL_OTEL_ATTRIBUTES") == "true":
        return {
            "run_id": os.getenv("SETLIST_RUN_ID", "unknown"),
            "dataset": os.getenv("SETLIST_DATASET", "unknown"),
            "host_name": os.getenv("HOSTNAME", "unknown"),
        }

    return {}
