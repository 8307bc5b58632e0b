//! Complexity measurements: analytic FLOP and byte counts, forward-pass
//! timing sweeps and log-log slope fits.

pub mod flops;
pub mod memory;
pub mod svg;
pub mod sweep;

pub use flops::{count_flops, flop_breakdown, FlopBreakdown};
pub use memory::{memory_profile, peak_bytes, MemoryProfile};
pub use svg::{render_svg, write_svg};
pub use sweep::{
    fit_loglog, fit_scaling, measure, run_sweep, run_sweep_with, sanity_violations, speedups, write_csv,
    BenchRecord, ScalingFit, SweepOptions, CSV_HEADER,
};
