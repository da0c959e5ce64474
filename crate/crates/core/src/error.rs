use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage names used to tag instructor failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ClassifyEdit,
    LocateTarget,
    ComposeCaption,
    Inpaint,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::ClassifyEdit => "classify_edit",
            Stage::LocateTarget => "locate_target",
            Stage::ComposeCaption => "compose_caption",
            Stage::Inpaint => "inpaint",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("timestep ordering error: t_prev={t_prev} must be < t={t}")]
    Ordering { t: usize, t_prev: usize },

    #[error("layer index {index} out of range 1..={layers}")]
    Index { index: usize, layers: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("client error after {attempts} attempt(s): {message}")]
    Client { message: String, attempts: u32, retryable: bool },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Load {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    NotFound,
    StageFailure,
    ModelError,
}

/// Wire form of an error, shared by the HTTP service and the CLI.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            stage: None,
            message: message.into(),
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.code {
            ErrorCode::Validation => 422,
            ErrorCode::NotFound => 404,
            ErrorCode::StageFailure => 502,
            ErrorCode::ModelError => 500,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code {
            ErrorCode::Validation => 2,
            ErrorCode::NotFound => 3,
            ErrorCode::StageFailure | ErrorCode::ModelError => 4,
        }
    }
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        let code = match e.root() {
            Error::Validation(_) | Error::Parameter(_) | Error::Shape(_) | Error::Config(_) | Error::Json(_) => {
                ErrorCode::Validation
            }
            Error::NotFound(_) | Error::Load { .. } => ErrorCode::NotFound,
            Error::Client { .. } => ErrorCode::StageFailure,
            _ if e.stage().is_some() => ErrorCode::StageFailure,
            _ => ErrorCode::ModelError,
        };
        Self {
            code,
            stage: e.stage(),
            message: e.to_string(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self::from(&e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn api_error_mapping() {
        let v = ApiError::from(Error::Validation("w".into()));
        assert_eq!((v.code, v.http_status(), v.exit_code()), (ErrorCode::Validation, 422, 2));
        let nf = ApiError::from(Error::NotFound("x".into()).at_stage(Stage::LocateTarget));
        assert_eq!((nf.code, nf.stage, nf.http_status()), (ErrorCode::NotFound, Some(Stage::LocateTarget), 404));
        let m = ApiError::from(Error::Model("boom".into()));
        assert_eq!((m.code, m.exit_code()), (ErrorCode::ModelError, 4));
        let s = ApiError::from(Error::Generation("x".into()).at_stage(Stage::Inpaint));
        assert_eq!(s.code, ErrorCode::StageFailure);
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["code"], "validation");
        assert!(json.get("stage").is_none());
    }
}
