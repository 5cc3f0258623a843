pub mod classify;
pub mod data;
pub mod em;
pub mod error;
pub mod ese;
pub mod esn;
pub mod numkit;
pub mod sim;

pub use classify::{Classifier, GroupPair, LinearRule, RuleKind};
pub use em::{EStepMoments, FitOptions, FitResult, Theta, ThetaRecord, TrainingData};
pub use error::{Error, Result};
pub use ese::{Costs, DensityGenerator, EseParams, Group, Priors};
pub use esn::{AffineProjection, EsnParams};
pub use sim::{ConfusionMatrix, ReportFormat, RunOptions, SimConfig, SimReport};
