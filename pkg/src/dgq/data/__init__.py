"""Committed suite manifests."""

from pathlib import Path

STANDARD_SUITE = Path(__file__).with_name("standard_suite.json")
