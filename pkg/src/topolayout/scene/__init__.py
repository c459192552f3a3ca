from .dataset import GraphPrepConfig, build_dataset, load_dataset, samples_from_scene, save_dataset
from .descriptors import (SCALE_FLOOR, EdgeGeometry, SpatialDescriptor, apply_geometry, compute_descriptor,
                          floored, relative_geometry)
from .graph import (SceneNode, SubgraphSample, abstract_nodes, generate_edges, is_weakly_connected,
                    make_sample, partition_subgraphs, select_anchor, target_edge_count, undirected_hops,
                    validate_sample)
from .io import SampleFormatError, dumps_sample, loads_sample, read_sample, samples_equal, write_sample
from .synth import (CATEGORIES, NOISE_CATEGORY, LabeledPointCloud, SceneFormatError, SceneSpec, generate_scene,
                    read_scene, write_scene)
