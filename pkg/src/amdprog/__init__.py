"""Workbench for 1-year nvAMD progression prognosis on longitudinal fundus cohorts."""

__version__ = "0.1.0"
