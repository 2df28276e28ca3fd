//! On-disk stride datasets, synthetic generation, subject splits and batching.

mod batch;
pub mod container;
mod split;
mod store;
mod synthetic;

pub use batch::{batch_indices, batch_iter};
pub use container::{read_container, read_f32, write_container, write_f32, write_f64, AnyTensor};
pub use split::{split_loocv, Split};
pub use store::{load_dataset, write_dataset, IndexRecord, StrideDataset, INDEX_FILE};
pub use synthetic::{generate_synthetic, DepthProfile, ProfileTable, SyntheticSpec, TerrainProfile};
