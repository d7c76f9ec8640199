//! Correlation statistics, empirical mode decomposition and Hilbert analysis.

mod emd;
mod hilbert;
mod spline;
mod stats;

pub use emd::{
    decompose, envelopes, find_extrema, imf_criteria_hold, sift, spline_envelope, EmdConfig, EnvelopePair,
    EnvelopeSide, ImfSet, SiftConfig, MIN_DECOMPOSE_LEN,
};
pub use hilbert::{analytic_signal, fft_in_place, hht, instantaneous, HhtFrame, HhtRow};
pub use spline::NaturalSpline;
pub use stats::{acf, pacf, pacf_from_acf};
