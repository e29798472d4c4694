//! Decoding of external observations: METAR weather reports and pollutant
//! concentration feeds, plus fetching them through a swappable transport.

mod feed;
mod metar;
mod pollution;

pub use feed::{
    fetch_feed, metar_points, pollutant_point, CannedTransport, DefaultTransport, FeedError,
    FeedKind, FeedSource, ObservationPoint, Transport, TransportError,
};
pub use metar::{
    parse_metar, MetarError, MetarGroup, MetarReport, ReferenceMonth, WindDirection, KNOT_TO_MPS,
};
pub use pollution::{
    parse_pollution_csv, PollutantRecord, PollutionBatch, PollutionError, RowError, Species,
    POLLUTION_HEADER,
};
