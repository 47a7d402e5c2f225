//! Regression tooling: OLS with inference statistics, the predicted-spread
//! versus volume-ratio studies, and the execution performance attribution.

mod ols;
mod perf;
mod spike;

pub use ols::{f_upper_p, ols, ols_named, t_two_sided_p, OlsResult, Term};
pub use perf::{
    compute_market_features, performance_regression, MarketFeatures, MARKET_FEATURE_NAMES,
    MIN_PERF_ROWS,
};
pub use spike::{spike_diff_regression, spike_gate, spike_level_regression};
