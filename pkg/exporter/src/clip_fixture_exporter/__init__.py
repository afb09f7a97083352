"""Encode expression prompts with a pretrained CLIP text encoder and
write them in the expredit embedding-fixture JSON format, so the editing
pipeline can run against genuine embedding geometry."""

__version__ = "0.1.0"

from .encoders import DEFAULT_MODEL, TextEncoder, load_clip_encoder
from .errors import (DimensionMismatchError, EncoderUnavailableError,
                     EncodingError, ExporterError, PromptSetError)
from .export import encode_prompt_set, export_fixture
from .prompts import (EXPRESSION_PROMPTS, PromptSet, builtin_entries,
                      default_prompt_set, load_prompt_file,
                      merged_prompt_set)

__all__ = [
    "DEFAULT_MODEL", "TextEncoder", "load_clip_encoder",
    "DimensionMismatchError", "EncoderUnavailableError", "EncodingError",
    "ExporterError", "PromptSetError",
    "encode_prompt_set", "export_fixture",
    "EXPRESSION_PROMPTS", "PromptSet", "builtin_entries",
    "default_prompt_set", "load_prompt_file", "merged_prompt_set",
]
