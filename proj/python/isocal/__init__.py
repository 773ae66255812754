"""Isotropy metrics and calibration methods for embedding matrices."""

from ._isocal import (
    ContractError,
    DegenerateEmbeddingError,
    DegenerateSpectrumError,
    Flow,
    IoError,
    IsocalError,
    NumericalError,
    ParseError,
    cosreg_grad,
    cosreg_loss,
    isotropy,
    isotropy_i1,
    isotropy_i2,
    log_partition,
    mean_pairwise_cosine,
    read_embeddings,
    report,
    run_method,
    spectrum_grad,
    spectrum_loss,
    spectrum_prior,
    svd,
    welch_ttest,
    write_embeddings,
)

__all__ = [
    "ContractError",
    "DegenerateEmbeddingError",
    "DegenerateSpectrumError",
    "Flow",
    "IoError",
    "IsocalError",
    "NumericalError",
    "ParseError",
    "cosreg_grad",
    "cosreg_loss",
    "isotropy",
    "isotropy_i1",
    "isotropy_i2",
    "log_partition",
    "mean_pairwise_cosine",
    "read_embeddings",
    "report",
    "run_method",
    "spectrum_grad",
    "spectrum_loss",
    "spectrum_prior",
    "svd",
    "welch_ttest",
    "write_embeddings",
]
