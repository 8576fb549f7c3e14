//! Datasets: the grid-shaped toy target, MNIST and image folders, splits and
//! batching, and CSV export of 2-D points.

pub mod csv;
pub mod dataset;
pub mod idx;
pub mod toy;

pub use dataset::{load_idx_images, load_pgm_folder, mnist_load, BatchIter, BatchStream, Normalization, SplitDataset};
pub use toy::{ToySpec, DEFAULT_TOY_SAMPLES};
