use std::fmt;

/// Exit 2 for user or config mistakes, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn internal(e: impl fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

macro_rules! internal_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Internal(e.to_string())
            }
        }
    )*};
}

internal_from!(
    audioshield::audio::AudioError,
    audioshield::attack::AttackError,
    audioshield::detection::DetectionError,
    audioshield::eval::EvalError,
    serde_json::Error
);

impl From<audioshield::classifier::ClassifierError> for CliError {
    fn from(e: audioshield::classifier::ClassifierError) -> Self {
        use audioshield::classifier::ClassifierError as E;
        match e {
            E::InsufficientData(_) | E::UnknownClass(_) => CliError::User(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}
