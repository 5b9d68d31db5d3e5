"""Experiment orchestration: training loops, metrics, repetitions and tables."""
