"""Ingestion-bundle extraction from a tiny demonstration language model."""

from .extract import ExtractionConfig, extract_stats, load_dataset, make_demo_dataset
from .model import TinyCausalLM, answer_span, build_sequence
from .zeroorder import zero_order_gradient

__version__ = "0.1.0"
