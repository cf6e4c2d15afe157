//! A random K-SAT laboratory.
//!
//! The crate covers the full experimental toolchain for the statistical
//! mechanics of random K-SAT at desk scale:
//!
//! * [`instance`] — uniform and planted instance ensembles, DIMACS i/o,
//!   exhaustive solution counting (the brute-force oracle).
//! * [`graph`] — the bipartite clause/variable factor graph with
//!   directed-edge message indexing.
//! * [`bp`] — belief propagation at finite inverse temperature and in the
//!   zero-temperature (uniform-over-solutions) limit, with the Bethe
//!   free-entropy assembly.
//! * [`decimate`] — unit clause propagation, the pure-literal rule, a
//!   complete DPLL oracle, BP-guided decimation with frozen-variable
//!   bookkeeping, and WalkSAT.
//! * [`sp`] — zero-temperature survey propagation at Parisi parameter `m`,
//!   the replicated free entropy of an instance, and survey-inspired
//!   decimation (SID).
//! * [`cavity`] — population dynamics for the ensemble RS and 1RSB cavity
//!   equations: free-entropy densities, complexity curves, overlaps and
//!   phase-transition location.
//! * [`sk`] — a small Sherrington-Kirkpatrick sandbox: annealing, pure-state
//!   overlap matrices, hierarchical clustering and an ultrametricity score.
//!
//! Everything is deterministic given explicit seeds. Data-parallel outer
//! loops (ensembles, seed sweeps, grid points) go through [`par`], which is
//! backed by rayon when the `parallel` feature (default) is enabled and
//! falls back to plain sequential iteration otherwise.

pub mod bp;
pub mod cavity;
pub mod decimate;
pub mod graph;
pub mod instance;
pub mod par;
pub mod sk;
pub mod sp;

pub use instance::{Clause, CnfInstance, Literal, PartialAssignment, SpinConfig};
