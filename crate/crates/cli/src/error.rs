use std::fmt;

/// Machine-readable failure category printed as `error[CLASS]: message`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Schema,
    Data,
    Config,
    Usage,
    Io,
    Numeric,
    Sampler,
    Internal,
}

impl ErrorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorClass::Parse => "PARSE",
            ErrorClass::Schema => "SCHEMA",
            ErrorClass::Data => "DATA",
            ErrorClass::Config => "CONFIG",
            ErrorClass::Usage => "USAGE",
            ErrorClass::Io => "IO",
            ErrorClass::Numeric => "NUMERIC",
            ErrorClass::Sampler => "SAMPLER",
            ErrorClass::Internal => "INTERNAL",
        }
    }

    /// 2 for problems with the inputs or invocation, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ErrorClass::Parse | ErrorClass::Schema | ErrorClass::Data | ErrorClass::Config | ErrorClass::Usage => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        CliError {
            class,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Usage, message)
    }

    /// The single line written to stderr.
    pub fn line(&self) -> String {
        let msg: Vec<&str> = self.message.split_whitespace().collect();
        format!("error[{}]: {}", self.class.as_str(), msg.join(" "))
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

fn classify(e: &scurve_core::Error) -> ErrorClass {
    use scurve_core::Error as E;
    match e {
        E::Parse { .. } | E::Csv(_) => ErrorClass::Parse,
        E::Schema(_) => ErrorClass::Schema,
        E::Validation(_) | E::KnotCollision { .. } | E::OutOfRange { .. } => ErrorClass::Data,
        E::InvalidArgument(_) => ErrorClass::Config,
        E::Io(_) => ErrorClass::Io,
        E::NotPositiveDefinite | E::Infeasible(_) | E::Undefined(_) => ErrorClass::Numeric,
        E::Sampler(_) => ErrorClass::Sampler,
        E::Step { source, .. } => match classify(source) {
            ErrorClass::Numeric | ErrorClass::Sampler => ErrorClass::Sampler,
            other => other,
        },
        E::DimensionMismatch { .. } => ErrorClass::Internal,
    }
}

impl From<scurve_core::Error> for CliError {
    fn from(e: scurve_core::Error) -> Self {
        CliError::new(classify(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ErrorClass::Io, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
