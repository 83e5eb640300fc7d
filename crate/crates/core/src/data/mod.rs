//! Loading, synthesis and serialization of clouds, pairs and weights.

pub mod blob;
pub mod corpus;
pub mod fixtures;
pub mod off;
pub mod pair;

pub use blob::{decode_weights, encode_weights, read_weights, write_weights, BlobHeader, ValueWidth};
pub use corpus::generate_corpus;
pub use fixtures::{read_cloud_csv, read_values_csv, write_cloud_csv, write_values_csv};
pub use off::{load_off, load_off_mesh, sample_surface, write_off, Mesh};
pub use pair::{make_pair, normalize_unit_cube, resample, Pair, PairSpec, Resampling};
