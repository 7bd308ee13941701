//! Data-parallel volumetric mapping with submaps.
//!
//! Point-cloud frames are fused into truncated signed distance grids
//! ([`tsdf`]) stored as hashed blocks of voxels ([`grid`], [`hash`],
//! [`soa`]). Each grid belongs to a [`submap`]; finished submaps get a
//! Euclidean distance field ([`esdf`]) and their poses are refined by
//! pose-graph optimization ([`backend`]). [`pipeline`] wires these stages
//! together and [`dataset`] reads, generates and evaluates inputs.

pub mod backend;
pub mod bench;
pub mod dataset;
pub mod esdf;
pub mod grid;
pub mod hash;
pub mod pipeline;
pub mod soa;
pub mod submap;
pub mod tsdf;

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] soa::StoreError),
    #[error(transparent)]
    Hash(#[from] hash::HashError),
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Tsdf(#[from] tsdf::TsdfError),
    #[error(transparent)]
    Esdf(#[from] esdf::EsdfError),
    #[error(transparent)]
    Submap(#[from] submap::SubmapError),
    #[error(transparent)]
    Backend(#[from] backend::BackendError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
