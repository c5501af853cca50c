"""
Utility modules: parsing and formatting helpers, integration, file I/O.
"""
