"""
Version-identification backends.

Every backend prepares the reference catalog once and a query state per window. Pairwise
backends (``qmax``, ``2dftm``) expose ``distance(query, ref_id)``; index backends
(``embed``, ``embed-fallback``) expose ``search(query) -> (ref_id, distance)``.
"""
from typing import Optional, Sequence

from setlist.backends.embed import EmbeddingBackend, FallbackEmbeddingBackend, TrackEmbedding
from setlist.backends.qmax import QmaxBackend, QmaxParams
from setlist.backends.tdftm import TdftmBackend, TdftmParams
from setlist.errors import UsageError

BACKEND_NAMES = ("qmax", "2dftm", "embed", "embed-fallback")


def make_backend(
        name: str,
        qmax_params: QmaxParams = QmaxParams(),
        tdftm_params: TdftmParams = TdftmParams(),
        reference_embeddings: Optional[Sequence[TrackEmbedding]] = None,
        query_embeddings: Optional[Sequence[TrackEmbedding]] = None,
):
    if name == "qmax":
        return QmaxBackend(qmax_params)
    if name == "2dftm":
        return TdftmBackend(tdftm_params)
    if name == "embed":
        if reference_embeddings is None or query_embeddings is None:
            raise UsageError("The embed backend needs reference and query embedding files")
        return EmbeddingBackend(reference_embeddings, query_embeddings)
    if name == "embed-fallback":
        return FallbackEmbeddingBackend()
    raise UsageError(f"Unknown backend '{name}', expected one of: {', '.join(BACKEND_NAMES)}")
