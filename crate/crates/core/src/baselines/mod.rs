//! Non-neural reference classifiers: a lexicon base-frequency rule and NBSVM.

pub mod dictionary;
pub mod nbsvm;

pub use dictionary::{CategoryMap, DictionaryModel};
pub use nbsvm::{nb_log_count_ratio, NbsvmConfig, NbsvmModel};
