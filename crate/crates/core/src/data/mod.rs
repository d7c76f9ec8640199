//! SCADA ingestion, calendar features and the synthetic network generator.

mod csv_io;
mod series;
mod synth;
mod timestamp;

pub use csv_io::{parse_csv, to_csv};
pub use series::{
    column_name, AnomalyEvent, Dataset, Direction, SensorKind, SensorSeries, INLET_COLUMN, MAX_PRESSURE_BAR,
};
pub use synth::{
    generate_network, inject_anomalies, inject_missing, plan_anomalies, AnomalyPlan, AnomalySpec, SynthConfig,
    RAMP_SAMPLES, SAMPLES_PER_DAY, SAMPLES_PER_WEEK,
};
pub use timestamp::{time_features, TimeFeatures, Timestamp, DEFAULT_CADENCE_MINUTES, MINUTE_SLOTS};
