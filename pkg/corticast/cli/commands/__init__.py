"""
Command handlers, one module per pipeline stage
"""
