"""Toy-scale direct-estimation implant models on craniotk exports.

Two variants: DE (defected mask in, implant probability out) and DE-Shape
(same network with the registered atlas as a second input channel). The
mechanism under test is the shape-prior channel and the compound loss, not
full-resolution accuracy.
"""

__version__ = "0.1.0"
