"""
Charts for benchmark results.
"""

import logging
import os

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

logger = logging.getLogger(__name__)


def scaling_figure(frame: pd.DataFrame) -> go.Figure:
    """Log-log wall-clock of attention and LPA against sequence length."""
    long = frame.melt(id_vars="n", value_vars=["attn_ms", "lpa_ms"], var_name="mechanism", value_name="ms")
    long["mechanism"] = long["mechanism"].map({"attn_ms": "attention", "lpa_ms": "LPA"})

    fig = px.line(
        long,
        x="n",
        y="ms",
        color="mechanism",
        markers=True,
        log_x=True,
        log_y=True,
        title="Forward time versus sequence length",
        labels={"n": "Sequence length", "ms": "Median time (ms)"},
    )
    fig.update_layout(legend=dict(title=None))
    return fig


def write_figure(fig: go.Figure, path: str) -> str:
    """
    Write a static SVG; falls back to standalone HTML when static export fails.

    Returns:
        The path actually written
    """
    try:
        fig.write_image(path, format="svg")
        return path
    except Exception as e:
        fallback = os.path.splitext(path)[0] + ".html"
        logger.error(f"SVG export failed ({e}); writing {fallback} instead")
        fig.write_html(fallback, include_plotlyjs="cdn")
        return fallback
