use std::fmt;
use std::path::{Path, PathBuf};

use clea::behaviors::DatabaseError;
use clea::eval::EvalError;
use clea::exploration::ExplorationError;
use clea::features::FeatureError;
use clea::reward::RewardError;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: Kind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            error: Kind::Usage,
            message: message.into(),
            path: None,
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            error: Kind::Data,
            message: message.into(),
            path: None,
        }
    }

    pub fn at(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.error {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numerical => 3,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn numerical(message: String) -> CliError {
    CliError {
        error: Kind::Numerical,
        message,
        path: None,
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_numerical() {
            numerical(e.to_string())
        } else if matches!(e, EvalError::InvalidPlan(_)) {
            CliError::usage(e.to_string())
        } else {
            CliError::data(e.to_string())
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Diverged { .. } | FeatureError::Autodiff(_) => numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::Diverged { .. } | RewardError::Autodiff(_) => numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<DatabaseError> for CliError {
    fn from(e: DatabaseError) -> Self {
        match e {
            DatabaseError::InvalidConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ExplorationError> for CliError {
    fn from(e: ExplorationError) -> Self {
        match e {
            ExplorationError::InvalidUser(_) | ExplorationError::PageSize { .. } => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::data(e.to_string())
    }
}
