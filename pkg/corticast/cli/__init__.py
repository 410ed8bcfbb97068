"""
Command-line surface: argument parsing and command routing
"""
