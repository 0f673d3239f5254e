//! Run configuration, single runs, ablation grids, plot data and the
//! gradient suite behind the command-line tool.

mod ablation;
mod commands;
mod config;
mod gradsuite;
mod plot;
mod run;

pub use config::{env_seed, Method, RunConfig, SEED_ENV};

pub use gradsuite::{gradient_suite, suite_case_names, SuiteCase};
pub use run::{
    evaluate, execute, prepare_records, save_outcome, train_model, RunLogs, RunOutcome, TrainedModel,
};
pub use ablation::{
    mean_score, parse_seeds, read_results, run_ablation, write_results, AblationSpec, GridRun, Preset,
    ResultRow, RESULT_COLUMNS,
};
pub use plot::{category_data, loss_curve_data, loss_dir_for, loss_file_name, write_plot_data, CATEGORIES};
pub use commands::{
    ablation_spec, cmd_ablate, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_plot_data, cmd_train, AblateOptions,
    AblationReport, DatasetSummary,
};
