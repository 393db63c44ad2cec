use std::fmt;

/// Errors surfaced to the user, each mapped to a process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Integrity(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Integrity(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Integrity(m) => write!(f, "integrity error: {m}"),
        }
    }
}

impl From<superlinear::Error> for Failure {
    fn from(e: superlinear::Error) -> Self {
        use superlinear::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Dimension { .. } => Failure::Config(msg),
            E::Integrity { .. } | E::Version { .. } => Failure::Integrity(msg),
            _ => Failure::Data(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(format!("json: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}
