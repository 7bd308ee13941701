//! The guide in `book/` is compiled here so that `cargo test` runs every
//! listing. One empty module per chapter keeps failures traceable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/storage.md")]
pub mod storage {}
#[doc = include_str!("../../../book/src/hashing.md")]
pub mod hashing {}
#[doc = include_str!("../../../book/src/grids.md")]
pub mod grids {}
#[doc = include_str!("../../../book/src/tsdf.md")]
pub mod tsdf {}
#[doc = include_str!("../../../book/src/esdf.md")]
pub mod esdf {}
#[doc = include_str!("../../../book/src/submaps.md")]
pub mod submaps {}
#[doc = include_str!("../../../book/src/backend.md")]
pub mod backend {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
