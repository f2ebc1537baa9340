use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::WireError;

/// Transport address of a server: `mem:<name>` for the in-process hub or
/// `tcp:<host>:<port>` for stream sockets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Locator {
    Mem(String),
    Tcp { host: String, port: u16 },
}

impl Locator {
    pub fn mem(name: impl Into<String>) -> Self {
        Locator::Mem(name.into())
    }
}

impl FromStr for Locator {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WireError::MalformedLocator(s.to_string());
        if let Some(name) = s.strip_prefix("mem:") {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(bad());
            }
            return Ok(Locator::Mem(name.to_string()));
        }
        if let Some(rest) = s.strip_prefix("tcp:") {
            let (host, port) = rest.rsplit_once(':').ok_or_else(bad)?;
            if host.is_empty() {
                return Err(bad());
            }
            let port = port.parse().map_err(|_| bad())?;
            return Ok(Locator::Tcp {
                host: host.to_string(),
                port,
            });
        }
        Err(bad())
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locator::Mem(name) => write!(f, "mem:{name}"),
            Locator::Tcp { host, port } => write!(f, "tcp:{host}:{port}"),
        }
    }
}

impl Serialize for Locator {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Locator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
