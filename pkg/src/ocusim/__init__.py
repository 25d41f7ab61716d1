"""Diffractive optical convolution units: physics model, trainer, networks.

Submodules:
    optics     analytical device model (diffraction, phase masks, detection)
    tensorize  image <-> patch-matrix conversions
    srp        structural re-parameterization training of single units
    kernels    standard 3x3 kernel library
    optim      Param container and Adam
    nn         layer framework for optical / electrical networks
    networks   classifier and denoiser construction + training loops
    perf       throughput / energy calculator
    data       dataset ingestion, noise injection, metrics
    pgm        binary PGM image files
    checkpoint versioned plain-text model persistence
    config     INI experiment configuration
    cli        command-line front end
"""

__version__ = "0.1.0"
