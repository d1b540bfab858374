//! Budget-constrained uncertainty thresholding for object-detector outputs.
//!
//! Detections are split into correct and false detections by IoU matching
//! against ground truth. Per-detection uncertainties (classification entropy,
//! localization variance) are optionally calibrated, weighted and summed into
//! one score, and a threshold on that score removes as many false detections
//! as possible while keeping a budgeted share of the correct ones.
//!
//! ```
//! use costfilter::roc::{build_roc, select_threshold};
//! use costfilter::model::Budget;
//!
//! let roc = build_roc(&[0.1, 0.2, 0.3], &[0.25, 0.4]).unwrap();
//! let op = select_threshold(&roc, &Budget::retain_cd(0.9).unwrap());
//! assert_eq!(op.delta, 0.35);
//! ```

pub mod calibration;
pub mod error;
pub mod io;
pub mod matching;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod roc;
pub mod safeguards;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
pub use matching::{match_and_categorize, CategorizedSet, Category, CategoryCounts};
pub use model::{BoundingBox, Budget, Dataset, DetectionRecord, GroundTruthRecord, ImageId, TauSet, UseCase};
pub use optimizer::{optimize, OptimizerConfig, ThresholdProfile, ThresholdingProblem};
pub use uncertainty::{ChannelConfig, ClsChannel, CombineMode};
