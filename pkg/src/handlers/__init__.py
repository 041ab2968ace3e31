"""
Subcommand handlers for the stratified estimation engine
"""
