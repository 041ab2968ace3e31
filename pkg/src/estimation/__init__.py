"""
Strata, estimators, transport maps and testbeds
"""
