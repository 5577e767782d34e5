"""Tests for the MANET simulator."""
