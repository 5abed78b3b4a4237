"""
Egg Fertility Lab Backend
Transfer-learning pipeline for candling image classification
"""

__version__ = "1.0.0"
__author__ = "Egg Fertility Lab Team"
