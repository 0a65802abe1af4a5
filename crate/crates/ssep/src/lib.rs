//! Simulation-and-verification laboratory for the one-dimensional symmetric
//! simple exclusion process (SSEP) under diffusive scaling.
//!
//! Particles on a finite lattice window perform symmetric nearest-neighbour
//! jumps, suppressed onto occupied sites, with time speeded up by `N²`. The
//! crate simulates this dynamics exactly (continuous-time, event-driven) and
//! checks the fluctuation behaviour of the density field, the bond current,
//! and a tagged particle against deterministic references:
//!
//! * [`lattice`] — exact kinetic Monte Carlo for one replica: occupancy
//!   configuration, bond currents, martingale accumulators, tagged particle,
//!   and the density fluctuation field.
//! * [`pde`] — the deterministic side: explicit finite-difference solution of
//!   the lattice heat equation, the exact Gaussian-kernel solution of the
//!   continuum heat equation, the compressibility `χ = ρ(1−ρ)`, the tagged
//!   law-of-large-numbers path `u_t`, and mean currents.
//! * [`gauss`] — quadrature evaluation of the limiting Gaussian covariances
//!   of the density field, the current, and the tagged particle.
//! * [`harness`] — replica ensembles with reproducible parallel execution,
//!   moment/jackknife estimators, and statistical verdicts comparing Monte
//!   Carlo estimates to the quadrature values.
//! * [`verify`] — independent oracles (small-lattice matrix exponential) and
//!   invariant suites used to validate the simulator itself.
//! * [`io`] — CSV/JSON export and import of sample sets, field grids,
//!   covariance tables and reports, all tagged with a configuration hash.
//!
//! Scaling conventions used throughout: space is scaled by `1/N`, time is
//! macroscopic (the microscopic chain runs at rate `N²`), and the heat
//! semigroup is generated by the full Laplacian `Δ`, so the Gaussian kernel
//! at time `t` has variance `2t`.

pub mod gauss;
pub mod harness;
pub mod io;
pub mod lattice;
pub mod pde;
pub mod profile;
pub mod quad;
pub mod special;
pub mod stats;
pub mod testfn;
pub mod verify;

pub use profile::Profile;
pub use testfn::TestFn;
