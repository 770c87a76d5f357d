"""Distribution-system state estimation with topology-pruned neural networks.

Submodules are imported on first attribute access so that ``pawnn.cli``
can configure thread counts before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "grid": ("Feeder", "Bus", "Line", "LoadSpec", "TreeGraph", "load_feeder", "save_feeder", "hop_distance",
             "simple_feeder"),
    "measurements": ("QuadraticMeasurement", "MeasurementSet", "build_measurement", "synthesize",
                     "measurement_set_from_config"),
    "powerflow": ("LoadScenario", "PowerFlowError", "solve", "solve_batch"),
    "wls": ("GnOptions", "GnReport", "gauss_newton", "flat_start"),
    "partition": ("Partitioning", "cut_partition", "eccentricity", "tree_diameter", "greedy_place",
                  "exhaustive_place", "verify_separability", "placement_graph"),
    "nn": ("PawnnModel", "BlockMask", "AdamState", "build_mask", "init_model", "forward", "gradient",
           "adam_step", "train", "predict", "receptive_field"),
    "experiment": ("Scenario", "EvalReport", "load_scenario", "setup", "gen_profiles", "gen_dataset",
                   "metric_nu", "run_comparison", "robustness_experiment"),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE) + ["__version__"]


def __getattr__(name):
    if name in _WHERE:
        return getattr(import_module(f".{_WHERE[name]}", __name__), name)
    if name in _EXPORTS or name in ("kernels", "cli"):
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module 'pawnn' has no attribute {name!r}")
