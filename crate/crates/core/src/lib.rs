//! Epidemic forecasting engine: denoise regional case and death reports,
//! fit a mobility-coupled compartmental model with piecewise transmission
//! regimes, and derive forecasts, risk scores and what-if scenarios.

pub mod analytics;
pub mod calibrate;
pub mod error;
pub mod exec;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod ode;
pub mod preprocess;
pub mod scenarios;
pub mod series;

pub use error::{Error, Result};
pub use exec::Exec;
pub use series::TimeSeries;
