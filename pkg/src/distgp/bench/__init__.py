"""Benchmark harness: synthetic data, metrics, experiment runner and CLI."""
