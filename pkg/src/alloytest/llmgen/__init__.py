from .generate import ExtractedTest, GenerationRecord, generate, save_record, suite_text
from .prompts import VARIANTS, GenerationJob, PromptVariant, build_user_prompt, load_prompt
from .providers import (
    HTTPProvider,
    MockProvider,
    ProviderConfig,
    ProviderError,
    ProviderResponse,
    ReplayProvider,
    load_provider_configs,
)
from .repair import repair_syntax

__all__ = [
    "ExtractedTest",
    "GenerationJob",
    "GenerationRecord",
    "HTTPProvider",
    "MockProvider",
    "PromptVariant",
    "ProviderConfig",
    "ProviderError",
    "ProviderResponse",
    "ReplayProvider",
    "VARIANTS",
    "build_user_prompt",
    "generate",
    "load_prompt",
    "load_provider_configs",
    "repair_syntax",
    "save_record",
    "suite_text",
]
