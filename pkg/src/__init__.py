"""
Flow-Strata Engine - stratified Monte Carlo through transport maps
"""
