import importlib

import pytest


@pytest.mark.parametrize("name, attr", [
    ("ode_core", "integrate_ivp"), ("linear_spectrum", "dichotomy_spectrum"),
    ("gap_conditions", "check_condition"), ("partial_flows", "flow_partial"),
    ("conjugacy_builder", "partial_linearize"), ("verify_harness", "conjugacy_residual"),
    ("cli", "main"),
])
def test_named_modules(name, attr):
    assert callable(getattr(importlib.import_module(f"partlin.{name}"), attr))
