//! Fixed-shape flow features and class balancing.

mod augment;
mod balance;
mod dataset;
mod extract;

pub use augment::{augment_translate, AugmentationSpec, ShiftDirection};
pub use balance::{balance, BalanceStrategy};
pub use dataset::{FeatureKind, FeatureSet, Sample};
pub use extract::{
    extract_size_sequence, extract_timeseries, SizeSequenceFeature, TimeSeriesFeature,
    SIZE_SEQ_LEN, TS_LEN,
};
