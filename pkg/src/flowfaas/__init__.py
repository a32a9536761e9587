"""Elastic single-node function execution with a dataflow composition language."""

from .data import Backend, DataItem, DataSet, FunctionSpec, InputDecl, Kind
from .dsl import compile_source, parse, pretty_print
from .errors import FlowError, InvocationError
from .node import Node, NodeConfig
from .registry import FunctionRegistry

__version__ = "0.1.0"

__all__ = ["Backend", "DataItem", "DataSet", "FunctionSpec", "InputDecl", "Kind",
           "compile_source", "parse", "pretty_print", "FlowError", "InvocationError",
           "Node", "NodeConfig", "FunctionRegistry"]
