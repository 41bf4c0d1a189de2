# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Hardware blocks, workloads and result handling.
See instructions/architecture for development guidelines.
"""
