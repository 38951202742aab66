use thiserror::Error;

/// Errors produced by the scoring library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoBiasError {
    #[error("invalid location (lon {lon}, lat {lat})")]
    InvalidLocation { lon: f64, lat: f64 },

    #[error("invalid location at row {row}: lon {lon}, lat {lat}")]
    InvalidLocationAtRow { row: usize, lon: f64, lat: f64 },

    #[error("bearing is undefined between coincident points or from a pole")]
    UndefinedBearing,

    #[error("point lies {distance} rad from the projection center; azimuthal projection requires < pi/2")]
    ProjectionDomain { distance: f64 },

    #[error("invalid cap radius {0} rad; expected 0 < r < pi/2")]
    InvalidRadius(f64),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid bin layout: {0}")]
    InvalidBinLayout(String),

    #[error("invalid grid scale {0}")]
    InvalidScale(f64),

    #[error("invalid lag width {0}")]
    InvalidLag(f64),

    #[error("invalid sector count {0}; at least 2 sectors are required")]
    InvalidSectorCount(usize),

    #[error("value {value} lies outside the bin layout [{low}, {high}]")]
    OutOfRangeValue { value: f64, low: f64, high: f64 },

    #[error("histogram layouts differ")]
    Layout,

    #[error("KL divergence undefined: reference bin {bin} has zero mass")]
    DivergenceUndefined { bin: usize },

    #[error("partitioning has no patches")]
    EmptyPartition,

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("no scoreable ROI")]
    NoScoreableRoi,

    #[error("degenerate pattern: marks have zero variance")]
    DegeneratePattern,

    #[error("insufficient points for Moran's I: {0}")]
    InsufficientPoints(usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl GeoBiasError {
    /// Stable machine-readable code, used in reports and sweep tables.
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidLocation { .. } | Self::InvalidLocationAtRow { .. } => "InvalidLocation",
            Self::UndefinedBearing => "UndefinedBearing",
            Self::ProjectionDomain { .. } => "ProjectionDomainError",
            Self::InvalidRadius(_) => "InvalidRadius",
            Self::Parse { .. } => "ParseError",
            Self::InsufficientData(_) => "InsufficientData",
            Self::InvalidBinLayout(_) => "InvalidBinLayout",
            Self::InvalidScale(_) => "InvalidScale",
            Self::InvalidLag(_) => "InvalidLag",
            Self::InvalidSectorCount(_) => "InvalidSectorCount",
            Self::OutOfRangeValue { .. } => "OutOfRangeValue",
            Self::Layout => "LayoutError",
            Self::DivergenceUndefined { .. } => "DivergenceUndefined",
            Self::EmptyPartition => "EmptyPartition",
            Self::Aggregation(_) => "AggregationError",
            Self::NoScoreableRoi => "NoScoreableROI",
            Self::DegeneratePattern => "DegeneratePattern",
            Self::InsufficientPoints(_) => "InsufficientPoints",
            Self::DegenerateInput(_) => "DegenerateInput",
            Self::EmptyInput => "EmptyInput",
            Self::InvalidParameter(_) => "InvalidParameter",
            Self::Io { .. } => "IoError",
        }
    }
}

pub type Result<T, E = GeoBiasError> = std::result::Result<T, E>;
