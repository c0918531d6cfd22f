"""Synthetic (source graph, query, target graph) data."""
from .corpus import read_graphs, sample_graphs, write_graphs
from .dataset import (EmptySet, InsufficientGraphs, calibrate_P, generate_dataset, mixed_batches,
                      simulate_mean_ops, stream)
from .instances import (QUERY_SEPARATOR, GenConfig, ModificationInstance, TooSmall, filter_instance,
                        gen_delete, gen_insert, gen_multi, gen_single, gen_substitute, read_jsonl,
                        write_jsonl)
from .similarity import NoSimilarLabel, SimilarityTable
from .templates import Template, load_templates
