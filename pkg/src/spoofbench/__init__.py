"""Convolutional spoofing detectors built by random architecture search
or by back-propagation, with the biometric evaluation protocol."""
__version__ = "0.1.0"
