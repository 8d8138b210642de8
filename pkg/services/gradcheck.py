"""
Finite-Difference Gradient Checks

Central differences against the reverse-mode gradients of the pulse
accumulator layer, one parameter tensor at a time.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional

import torch

from exceptions import ParameterError
from models.lpa_params import LpaLayerParams
from services import mixer

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    key: str
    analytic_norm: float
    numeric_norm: float
    rel_error: float

    def passed(self, tolerance: float = TOLERANCE) -> bool:
        return self.rel_error < tolerance


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """||a - f|| / max(||a|| + ||f||, 1e-8)."""
    diff = torch.linalg.vector_norm(analytic - numeric)
    scale = torch.linalg.vector_norm(analytic) + torch.linalg.vector_norm(numeric)
    return float(diff / max(float(scale), 1e-8))


def central_difference(objective: Callable[[], torch.Tensor], tensor: torch.Tensor, h: float = STEP) -> torch.Tensor:
    """
    Numerical gradient of a scalar objective with respect to ``tensor``.

    ``tensor`` is perturbed in place element by element and restored.
    """
    if h <= 0:
        raise ParameterError(f"Step must be positive, got {h}")
    grad = torch.zeros_like(tensor)
    flat, out = tensor.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + h
            plus = float(objective())
            flat[i] = original - h
            minus = float(objective())
            flat[i] = original
            out[i] = (plus - minus) / (2 * h)
    return grad


def check_lpa_gradients(x: torch.Tensor, params: LpaLayerParams, upstream: torch.Tensor,
                        prev_gate_mean: Optional[torch.Tensor] = None, h: float = STEP,
                        keys: Optional[Iterable[str]] = None) -> Dict[str, GradCheckResult]:
    """
    Compare lpa_gradients with central differences of <upstream, y>.

    Args:
        x: Input (n, d), ideally float64
        params: Layer parameters
        upstream: Output cotangent
        prev_gate_mean: Optional cross-layer input
        h: Finite-difference step
        keys: Parameter keys to check (all, plus "x", when None)

    Returns:
        Mapping from key to GradCheckResult
    """
    analytic = mixer.lpa_gradients(x, params, upstream, prev_gate_mean)
    leaves = params.map_tensors(lambda t: t.detach().clone().contiguous())
    x_leaf = x.detach().clone().contiguous()
    named = dict(leaves.named_tensors())
    named["x"] = x_leaf

    def objective() -> torch.Tensor:
        return (upstream * mixer.lpa_forward(x_leaf, leaves, prev_gate_mean).y).sum()

    results = {}
    for key in (keys if keys is not None else named):
        numeric = central_difference(objective, named[key], h)
        results[key] = GradCheckResult(
            key=key,
            analytic_norm=float(torch.linalg.vector_norm(analytic[key])),
            numeric_norm=float(torch.linalg.vector_norm(numeric)),
            rel_error=relative_error(analytic[key], numeric),
        )
        logger.debug(f"{key}: rel err {results[key].rel_error:.2e}")
    return results
