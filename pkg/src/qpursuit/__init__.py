"""Sequential-query classification with learned hyperplane query dictionaries."""

from . import (  # noqa: F401
    diffmath,
    embedding_store,
    ip_oracle,
    pursuit_nets,
    query_dictionary,
    report_cli,
    trainer,
)

__version__ = "0.1.0"
