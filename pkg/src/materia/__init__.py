"""materia: turn a scientific-text corpus into a validated instruction-tuning dataset.

Pipeline stages: ingest -> extract -> review -> assemble -> train-config,
plus an embedding-similarity evaluation harness for benchmark answers.
"""

__version__ = "0.1.0"
