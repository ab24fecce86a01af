"""Robust linear and polyhedral estimation for linear inverse problems with
uncertain observation matrices."""
