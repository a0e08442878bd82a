//! Raw-file ingestion: vehicle snapshots, trip archives, region polygons,
//! holiday lists, and the seeded synthetic generator.

mod holidays;
mod regions;
mod snapshots;
mod synth;
mod trips;

pub use holidays::{load_holidays, HolidayCalendar};
pub use regions::{Polygon, Region, RegionSet, Ring};
pub use snapshots::{assign_regions, parse_snapshots, ParseReport, SnapshotRecord, VehicleType};
pub use synth::{generate_synthetic, SynthSpec};
pub use trips::{clean_trips, parse_trips, trips_to_panel, CleaningReport, CleaningRules, TripRecord};
