"""Experiment harness: spec files, seeded runs, result tables and reports."""
from .build import build_dictionary, derive_seed, train_network
from .engines import Engine, MissingCheckpointError, make_engine
from .plots import emit_plot_data, render_report
from .runner import ExperimentResult, TrialRecord, run_experiment
from .spec import ExperimentSpec, InvalidSpecError, load_spec, parse_spec
from .tables import Table, read_table, write_table
