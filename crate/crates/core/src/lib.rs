//! Latent coordinate spaces from sparse rating data.
//!
//! The crate factorizes item–user rating matrices into low-dimensional item
//! and user coordinates (regularized SVD, a bias-augmented variant, and a
//! non-negative factorization), brings the resulting spaces into a canonical
//! form that is invariant under the inherent rotation degeneracy, builds a
//! correlation-based multidimensional-scaling baseline, and quantifies how
//! much label structure (for example movie genres) the item coordinates
//! carry, by training classifiers on the coordinates and scoring them with
//! majority-normalized kappa.
//!
//! Pipeline order: [`ingest`] → [`factor`] / [`neighbor`] → [`standardize`]
//! → [`classify`] + [`evaluate`]. Every random choice derives from one
//! master seed ([`rng`]), and every stage artifact has a versioned snapshot
//! format ([`snapshot`]).

pub mod classify;
pub mod evaluate;
pub mod factor;
pub mod ingest;
pub mod neighbor;
pub mod rng;
pub mod snapshot;
pub mod standardize;

pub use classify::{DistanceKind, Kernel, LabeledPoints, SvmModel};
pub use evaluate::{ClassifierSpec, EvalReport, KappaCell, KnnKind, Outcome, SplitPlan, Tables};
pub use factor::{BiasTerms, FactorGradient, Factorization, ModelKind, TrainConfig, TrainOutcome};
pub use ingest::{LabelSet, RatingDataset, RatingFormat, RatingScale};
pub use neighbor::{DistanceMatrix, MdsConfig, MdsOutcome, SimilarityMatrix};
pub use standardize::{CoordinateSpace, Standardized};
