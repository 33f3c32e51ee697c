"""
A small Monte Carlo study
=========================

Selection frequencies for the linear, logistic and Cox designs, plus the
estimation error of the standard and envelope estimators.
"""

from envdim import run_table

report = run_table("T3", replicates=20, seed=0, ns=[150, 300], methods=["1d"])
print(report.to_text())

# the same report as CSV, ready for a spreadsheet
print(report.to_csv())
