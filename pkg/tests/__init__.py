"""Tests for glmpath."""
