"""This package contains workflows built on the core networks: speaker
adaptation, toy corpus generation and debug visualization"""
