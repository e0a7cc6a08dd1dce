"""Scenario loading, closed-loop simulation, campaigns and file output."""
