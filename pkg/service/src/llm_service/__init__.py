"""Fine-tune/generate HTTP microservice around a small causal language
model, speaking the generation-backend wire protocol."""

__version__ = "0.1.0"

from .app import Service, create_app
from .registry import ModelRegistry, UnknownModel
from .tokenizer import PromptTokenizer
from .training import InvalidParams, TrainingParams, TrainingReport, fine_tune, sample
