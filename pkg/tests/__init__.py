"""
Test suite for sensorvault.
"""
