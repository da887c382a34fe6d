use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),
    #[error("invalid gaze blendshapes: {0}")]
    InvalidGaze(String),
    #[error("invalid mouth index set: {0}")]
    MouthIndexSet(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no visible landmarks")]
    NoVisibleLandmarks,
    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate face box at frame {0} (y2 <= y1)")]
    DegenerateBox(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
