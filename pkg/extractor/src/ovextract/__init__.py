"""Bridge to external text-generation and embedding endpoints.

Generates class descriptions, fills description files with embeddings,
executes augmentation jobs on image exemplars, and writes embedding banks
in the classifier library's wire format. A deterministic mock mode keeps
the whole flow offline for tests.
"""

from .bankio import BankWriter
from .descriptions import (GenerationReport, choose_article,
                           generate_descriptions, render_prompt)
from .endpoints import (EndpointConfig, EndpointError, HttpEmbeddingClient,
                        HttpTextClient, MockEmbeddingClient, MockTextClient,
                        RateLimitedError)
from .extract import (DimensionDriftError, ExtractionReport,
                      extract_image_embeddings, extract_text_embeddings)
from .images import AugmentationJob, apply_job, encode_pixels

__version__ = "0.1.0"
