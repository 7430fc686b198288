//! Tensor sparse-representation classification for multi-channel signals.

pub mod classifier;
pub mod dataset;
pub mod dictlearn;
pub mod error;
pub mod fista;
pub mod prox;
pub mod sar;
pub mod shift;
pub mod tensor;

pub use classifier::{
    assemble_dictionary, classify, decide, denoise, ClassDecision, ClassInfo, ClassRole, ClassSamples,
    ConfuserRule, DecisionRule, SrcClassifier, StructuredDictionary, Verdict,
};
pub use dataset::{generate_benchmark, generate_multilook, BenchmarkSpec, Dataset, MultiLookSpec, Split};
pub use dictlearn::{learn, DictLearnConfig, LearnedDictionary};
pub use error::{Error, Result};
pub use fista::{lipschitz_constant, tensor_sparse_code, SolverConfig, SparseCoder};
pub use prox::{ProxSpec, SparsityMode};
pub use shift::{build_shift_dictionary, classify_multilook, MultiLookClassifier, Protocol, ViewDictionary};
pub use tensor::{channelwise_matmul, BlockId, ColumnPartition, Tensor3};
