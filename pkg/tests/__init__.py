"""Test package for Obsidian Capture."""
