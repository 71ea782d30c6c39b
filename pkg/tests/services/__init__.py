"""Unit tests for the sati service layer."""
