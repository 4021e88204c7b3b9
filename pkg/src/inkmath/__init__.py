"""Online handwritten math expression recognition.

Strokes in, postfix expression trees out: a numpy autograd core, a
stroke-token transformer, a synthetic expression/handwriting generator,
training and metric tooling, and a CLI plus HTTP inference service.
"""

__version__ = "0.1.0"
