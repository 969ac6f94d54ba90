"""
Minimal reverse-mode automatic differentiation over float64 numpy arrays
"""

from autodiff.tensor import Tape, Tensor, backward, current_tape, no_grad

__all__ = ['Tape', 'Tensor', 'backward', 'current_tape', 'no_grad']
