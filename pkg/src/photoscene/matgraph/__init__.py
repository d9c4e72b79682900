"""Differentiable procedural material graphs: parameters in, tileable maps out."""
from .graph import (
    GraphTemplate,
    NodeSpec,
    ParamSpec,
    TextureSet,
    eval_graph,
    get_template,
    list_collection,
    load_template,
    normal_from_height,
    sample_random_params,
)

__all__ = [
    "GraphTemplate",
    "NodeSpec",
    "ParamSpec",
    "TextureSet",
    "eval_graph",
    "get_template",
    "list_collection",
    "load_template",
    "normal_from_height",
    "sample_random_params",
]
