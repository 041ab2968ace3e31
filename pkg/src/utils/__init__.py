"""
Utility functions for the stratified estimation engine
"""
