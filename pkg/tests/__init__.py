"""Test suite for fre_seg."""
