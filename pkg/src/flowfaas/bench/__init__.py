"""Workload driver: stub services, load generation, trace replay, reports."""
