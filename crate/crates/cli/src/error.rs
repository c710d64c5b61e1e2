//! Error classification for process exit codes.

use std::fmt;

/// Invalid configuration or arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

fn core_code(e: &windcast::Error) -> i32 {
    use windcast::Error as E;
    match e {
        E::Argument(_) => EXIT_CONFIG,
        E::Numerical(_) | E::Rank { .. } | E::Geometry(_) => EXIT_NUMERICAL,
        E::Io { .. } | E::Schema { .. } | E::Shape(_) | E::Domain(_) => EXIT_IO,
    }
}

/// Exit code for an error chain: the first recognized cause decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() || cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<windcast::Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_IO
}
