//! Dataset loading, the single-shot protocol with repeated random splits,
//! CMC reports and the extraction timing benchmark.

mod bench;
mod dataset;
mod features;
mod pipeline;
mod protocol;
mod report;

pub use bench::{
    benchmark_timing, extract_table, model_digest, timing_csv, Elf16Features, FeatureExtractor,
    FusedFeatures, NetworkFeatures, NetworkOutput, TimingRow, MIN_TIMING_IMAGES,
};
pub use dataset::{load_dataset, make_split, ImageRecord, Layout, ReidDataset, SplitPlan, View};
pub use features::FeatureTable;
pub use pipeline::{dataset_training_set, network_image, network_tables, NetworkTables};
pub use protocol::{
    cmc_from_distances, match_ranks, mean_curve, pick_gallery, repeat_eval, run_trial,
    single_shot_eval, training_matrix, CmcCurve, EvalOptions, EvalReport, TrialResult,
    REPORTED_RANKS,
};
pub use report::{
    cmc_csv, cmc_svg, rank_table_csv, trials_csv, write_cmc_csv, write_cmc_svg, write_rank_table,
    write_trials_csv,
};
