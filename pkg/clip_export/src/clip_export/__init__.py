"""Export CLIP image/text embeddings as EMBD files."""

from .embd_writer import write_embd  # noqa: F401
from .encoders import DEFAULT_BACKBONE, EncoderPair, load_encoder  # noqa: F401
from .export import (  # noqa: F401
    ExportJob,
    export_concepts,
    export_images,
    read_concepts,
)

__version__ = "0.1.0"
