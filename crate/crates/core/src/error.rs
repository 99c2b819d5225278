use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the numerical core can report.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two arrays that must agree in shape do not.
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    /// A parameter is outside its documented range.
    InvalidParameter { name: &'static str, reason: String },
    /// The target span does not occur in the token list.
    SpanNotFound(String),
    /// The anchor token set resolved to no tokens.
    EmptyAnchorSet,
    /// Candidate filtering left no (timestep, layer) pair to score.
    EmptyCandidateSet,
    /// A selected (timestep, layer) pair is not in the attention stack.
    UnknownPair { timestep: u32, layer: u32 },
    /// Topology refinement produced no region; localization failed.
    NoRegion,
    /// A region or placement mask has no foreground.
    EmptyRegion,
    /// A timestep lies outside the injection window.
    OutsideWindow { t: f64, start: f64, end: f64 },
    /// An inverse FFT left an imaginary part above tolerance.
    ImaginaryResidue { max_abs: f64 },
    /// A prompt has no segments.
    EmptyPrompt,
    /// A prompt has segments but no scorable characters.
    NoScorableCharacters,
    /// A character is missing from the difficulty table and defaults are off.
    UnknownCharacter(char),
    /// Invalid attention stack contents.
    InvalidStack(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected shape {expected}, found {found}"),
            Error::InvalidParameter { name, reason } => write!(f, "invalid {name}: {reason}"),
            Error::SpanNotFound(span) => write!(f, "span {span:?} not found in token list"),
            Error::EmptyAnchorSet => f.write_str("anchor token set is empty"),
            Error::EmptyCandidateSet => f.write_str("no (timestep, layer) candidates left"),
            Error::UnknownPair { timestep, layer } => {
                write!(f, "pair (t={timestep}, l={layer}) not in attention stack")
            }
            Error::NoRegion => f.write_str("no region found: localization failed"),
            Error::EmptyRegion => f.write_str("region has no foreground cells"),
            Error::OutsideWindow { t, start, end } => {
                write!(f, "step {t} outside injection window [{end}, {start}]")
            }
            Error::ImaginaryResidue { max_abs } => {
                write!(f, "inverse FFT imaginary residue {max_abs:e} above tolerance")
            }
            Error::EmptyPrompt => f.write_str("prompt has no segments"),
            Error::NoScorableCharacters => f.write_str("prompt has no scorable characters"),
            Error::UnknownCharacter(c) => write!(f, "character {c:?} missing from table"),
            Error::InvalidStack(msg) => write!(f, "invalid attention stack: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
