"""
Registered parameter cases
Model parameters, starting points, thresholds and sampling steps of the
reference simulation studies
"""

from typing import Dict, List

from pydantic import BaseModel, Field


class ParameterCase(BaseModel):
    """One named parameter setting for a simulation study"""
    name: str = Field(description="Short identifier, e.g. 'OU1'")
    kind: str = Field(description="Model kind: WD, OU or SR")
    theta: Dict[str, float] = Field(description="True parameter values")
    x0: float = Field(description="Initial state")
    b: float = Field(description="Threshold level")
    delta: float = Field(description="Sampling step")


_CASES: List[ParameterCase] = [
    ParameterCase(name="WD1", kind="WD", theta={"mu": 0.3, "sigma": 0.5}, x0=0.0, b=10.0, delta=1.0),
    ParameterCase(name="WD2", kind="WD", theta={"mu": 0.3, "sigma": 1.5}, x0=0.0, b=10.0, delta=1.0),
    ParameterCase(name="WD3", kind="WD", theta={"mu": 0.1, "sigma": 0.5}, x0=0.0, b=10.0, delta=1.0),
    ParameterCase(name="WD4", kind="WD", theta={"mu": 0.1, "sigma": 1.5}, x0=0.0, b=10.0, delta=1.0),
    ParameterCase(name="OU1", kind="OU", theta={"mu": 0.43, "beta": 0.05, "sigma": 1.2}, x0=0.0, b=10.0, delta=0.1),
    ParameterCase(name="OU2", kind="OU", theta={"mu": 1.0, "beta": 0.025, "sigma": 1.0}, x0=0.0, b=10.0, delta=0.1),
    ParameterCase(name="OU3", kind="OU", theta={"mu": 2.0, "beta": 0.2, "sigma": 1.7}, x0=0.0, b=10.0, delta=0.1),
    ParameterCase(name="OU4", kind="OU", theta={"mu": 8.0, "beta": 1.0, "sigma": 1.0}, x0=0.0, b=10.0, delta=0.49),
    ParameterCase(name="SR1", kind="SR", theta={"mu": 10.0, "beta": 1.2, "sigma": 0.7}, x0=5.0, b=10.0, delta=0.08),
    ParameterCase(name="SR2", kind="SR", theta={"mu": 6.0, "beta": 0.31, "sigma": 0.5}, x0=10.0, b=20.0, delta=0.12),
    ParameterCase(name="SR3", kind="SR", theta={"mu": 2.0, "beta": 0.05, "sigma": 0.5}, x0=10.0, b=20.0, delta=0.08),
]

CASES: Dict[str, ParameterCase] = {case.name: case for case in _CASES}


def get_case(name: str) -> ParameterCase:
    """
    Look up a registered case by name.

    Args:
        name: Case identifier such as 'WD1' or 'ou1' (case-insensitive)

    Returns:
        The matching ParameterCase

    Raises:
        KeyError: If no case has that name
    """
    key = name.strip().upper()
    if key not in CASES:
        raise KeyError(f"Unknown case '{name}'. Available: {', '.join(CASES)}")
    return CASES[key]
