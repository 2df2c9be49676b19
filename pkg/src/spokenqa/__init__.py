"""Conversational QA over noisy speech transcripts with teacher-student distillation."""

__version__ = "0.1.0"
