//! Experiment workflows: segmentation training, screening fine-tuning,
//! evaluation, the ablation matrix and the α sweep.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod experiments;
pub mod run;
pub mod screening;
pub mod seg;

pub use config::{DatasetConfig, EvalConfig, ExperimentConfig, ScreeningConfig, SweepConfig, SyntheticConfig};
pub use dataset::{open_dataset, Purpose, SampleSet, Splits};
pub use eval::{evaluate, overlay, predict, predict_maps, Evaluation};
pub use experiments::{alpha_sweep, run_ablation, DiceRow, DiceTable};
pub use run::RunDir;
pub use screening::{finetune_screening, init_screening_model, ScreeningOutcome};
pub use seg::{overfit, train_segmentation, OverfitReport, SegOutcome};
