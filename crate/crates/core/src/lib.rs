//! Video object segmentation without optical flow.
//!
//! Per-frame object proposals are clustered by appearance descriptor; the
//! dominant recurring cluster is taken as the object. Frames where it was
//! not detected get a mask transferred from nearby frames by tracking a
//! window and running GrabCut seeded with the donors' averaged masks.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below pick `f64` unless noted.

pub mod cluster;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod premask;
pub mod raster;
pub mod scalar;
pub mod track;
pub mod transfer;

pub use error::{Error, Result};
pub use raster::{BinaryMask, BoundingBox, Frame, SoftMask, VideoSequence};
pub use scalar::{Real, Rgb};

pub type FrameF64 = raster::Frame<f64>;
pub type FrameF32 = raster::Frame<f32>;
pub type VideoSequenceF64 = raster::VideoSequence<f64>;
pub type VideoSequenceF32 = raster::VideoSequence<f32>;
pub type SoftMaskF64 = raster::SoftMask<f64>;
pub type SoftMaskF32 = raster::SoftMask<f32>;
pub type DescriptorF64 = ingest::Descriptor<f64>;
pub type DescriptorF32 = ingest::Descriptor<f32>;
pub type ProposalSetF64 = ingest::ProposalSet<f64>;
pub type SegmentRecordF64 = premask::SegmentRecord<f64>;
pub type ClusterAssignmentF64 = cluster::ClusterAssignment<f64>;
pub type GaussianMixtureF64 = transfer::GaussianMixture<f64>;
pub type GaussianMixtureF32 = transfer::GaussianMixture<f32>;
pub type UnaryFieldF64 = transfer::UnaryField<f64>;
pub type SynthCaseF64 = ingest::SynthCase<f64>;
