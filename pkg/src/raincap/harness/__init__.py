"""Experiment plumbing: toy data, COCO ingestion, checkpoints, image IO, config and the CLI."""
