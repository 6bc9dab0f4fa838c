"""Extract agent-based-model specifications from conceptual model documents.

The pipeline runs nine chained question-answering prompts against a language
model backend, recovers structured JSON from the raw answers, merges the
validated fragments into one canonical specification, and can emit an
execution schedule plus a pseudocode simulation skeleton from it.
"""

__version__ = "0.1.0"

from .document import Document, load_document
from .prompts import PromptCatalog
from .schema import ModelSpecification, lint, merge
from .scaffold import build_schedule, emit_skeleton

__all__ = [
    "Document",
    "ModelSpecification",
    "PromptCatalog",
    "__version__",
    "build_schedule",
    "emit_skeleton",
    "lint",
    "load_document",
    "merge",
]
