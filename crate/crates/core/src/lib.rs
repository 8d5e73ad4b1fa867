//! Distributed CNN training with benchmark-proportional convolution sharding.
//!
//! Convolutional layers dominate CNN training cost, and their kernels can be
//! evaluated independently of one another. This crate parallelizes *only* the
//! convolutional layers across a master and a set of stateless workers: the
//! master broadcasts each layer's input, ships every device a disjoint slice
//! of the kernel bank sized by a startup benchmark, and reassembles the
//! returned feature maps in kernel order. All remaining layers run on the
//! master alone, so workers never hold model state.
//!
//! Modules:
//! - [`tensor`], [`conv`], [`layers`], [`network`]: the numeric core (f64,
//!   deterministic accumulation order, bit-identical across device counts).
//! - [`balance`]: device benchmarking, inverse-time workload weights, and
//!   largest-remainder kernel apportionment.
//! - [`protocol`]: the length-prefixed binary wire format.
//! - [`transport`], [`cluster`]: TCP and in-memory connections, the master
//!   scatter/gather loop, and the worker serve loop.
//! - [`simulator`]: an analytic model of batch time and speedup for clusters
//!   that do not exist on the desk.
//! - [`data`], [`checkpoint`], [`metrics`]: CIFAR-10 loading, training state
//!   persistence, and per-batch CSV metrics.

pub mod balance;
pub mod checkpoint;
pub mod cluster;
pub mod conv;
pub mod data;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod protocol;
pub mod simulator;
pub mod tensor;
pub mod transport;

#[cfg(test)]
pub(crate) mod testutil;
