//! Age-structured population dynamics on patches coupled by dispersal.
//!
//! The crate simulates the balance law
//!
//! ```text
//! dn_k/dt + dn_k/da = -mu_k n_k (1 + n_k / L_k) + sum_j D_kj n_j
//! n_k(0, t) = int m_k(a, t) n_k(a, t) da,     n_k(a, 0) = f_k(a)
//! ```
//!
//! on `N` patches and decides persistence or extinction from the spectral
//! radius of the net reproductive operator.
//!
//! * [`scenario`]: model inputs, document loading, validation.
//! * [`characteristics`]: cohort integration along `a - t = const`.
//! * [`renewal`]: the newborn renewal equation and population field.
//! * [`spectral`]: net reproductive operators and fixed points.
//! * [`analysis`]: persistence verdicts, bounds and envelope sandwiches.
//! * [`cli`]: the `agepatch` command-line front end.

pub mod analysis;
pub mod characteristics;
pub mod cli;
pub mod error;
pub mod renewal;
pub mod scenario;
pub mod spectral;
pub mod testing;

pub use error::{Error, LoadError, Result};
pub use scenario::{load_scenario, validate_scenario, Model, ScenarioSpec};
