"""Polynomial neural sheaf diffusion."""
