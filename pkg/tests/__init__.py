"""Test package for network_utils."""
