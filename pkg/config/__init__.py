"""
Configuration package for Egg Fertility Lab
"""
