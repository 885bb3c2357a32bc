pub mod arch;
pub mod emu;
pub mod dse;
pub mod error;
pub mod mapping;
pub mod perf;
pub mod powerarea;
pub mod scalar;
pub mod workload;

pub use error::{Error, ErrorClass, Result};

pub type RunReportF64 = perf::RunReport<f64>;
pub type OperatorEstimateF64 = perf::OperatorEstimate<f64>;
pub type PowerAreaReportF64 = powerarea::PowerAreaReport<f64>;
pub type AreaBreakdownF64 = powerarea::AreaBreakdown<f64>;
pub type EnergyBreakdownF64 = powerarea::EnergyBreakdown<f64>;
pub type DesignPointF64 = dse::DesignPoint<f64>;
