//! Cohort input and output, normalization, positivity cutoffs, and synthetic
//! cohorts.

pub mod gmm;
pub mod io;
pub mod normalize;
pub mod synthetic;

pub use gmm::{fit_gmm_cutoff, positivity_summary, regional_cutoffs, GmmCutoff};
pub use io::{read_jsonl, read_raw_csv, write_jsonl, RawCohort, RawSubject};
pub use normalize::{denormalize, normalize, Normalization};
pub use synthetic::{generate_synthetic, GroundTruth, Preset, SyntheticCohort, SyntheticSpec};
