//! Scenario files, the bundled 39-bus case, experiment runs and CSV output.

mod experiment;
mod plot;
mod scenario;

pub use experiment::{
    format_g9, region_inputs_csv, run_experiment, trajectory_csv, trajectory_header,
    write_artifacts, BusExtremes, Experiment, ExperimentError, InputPeak, RunMode, Summary,
};
pub use plot::{emit_plot_data, PlotError};
pub use scenario::{load_scenario, ControllerSettings, Scenario, ScenarioError, FORMAT_VERSION};
