//! PointNetLK point-cloud registration with an ICP baseline, a bit-accurate
//! fixed-point PointNet emulation, and an analytic latency/resource model of
//! a pipelined PointNet FPGA core.

pub mod accel;
pub mod data;
pub mod error;
pub mod fixedpoint;
pub mod geometry;
pub mod icp;
pub mod lk;
pub mod pointnet;
pub mod protocol;
pub mod scalar;

pub use error::{BlobError, Error, Result};
pub use scalar::Real;

pub type Twist64 = geometry::Twist<f64>;
pub type Twist32 = geometry::Twist<f32>;
pub type RigidTransform64 = geometry::RigidTransform<f64>;
pub type RigidTransform32 = geometry::RigidTransform<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type PointNetParams64 = pointnet::PointNetParams<f64>;
pub type PointNetParams32 = pointnet::PointNetParams<f32>;
pub type RegistrationResult64 = lk::RegistrationResult<f64>;
pub type RegistrationResult32 = lk::RegistrationResult<f32>;
pub type GlobalFeature64 = pointnet::GlobalFeature<f64>;
pub type GlobalFeature32 = pointnet::GlobalFeature<f32>;
