"""schemalink: zero-shot schema linking for text-to-SQL over large catalogs.

Build time: parse a catalog, decompose it into typed semantic entities, and
embed them into an exact-search vector index. Inference time: decompose the
question into keywords, retrieve per (keyword, entity type), calibrate and
aggregate into a ranked table list, and hand a compact candidate schema to
table prediction and SQL generation.
"""

__version__ = "0.1.0"

from .catalog import (  # noqa: F401
    ALL_ENTITY_TYPES,
    EntityType,
    SchemaCatalog,
    SchemaEntity,
    decompose,
    parse_catalog,
    render_schema,
)
from .embedding import HashEmbeddingProvider, cosine_similarity, hash_embed  # noqa: F401
from .index import EntityIndex, RetrievalHit, build_index, load_index, save_index  # noqa: F401
from .linker import LinkResult, PipelineConfig, link  # noqa: F401
