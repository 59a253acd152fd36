"""Datasets, synthetic fixtures, metrics, configuration and experiment runs."""
