//! Task and communication-method identifiers shared across the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Two agents, each holding half of the retrieved documents.
    Ia,
    Debate,
    /// ReAct-style tool use over the corpus.
    Workflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nl,
    Sde,
    Cipher,
    /// Original hidden states injected in place of deltas.
    Raw,
    /// One agent, no communication.
    Single,
}

macro_rules! names {
    ($ty:ty, $what:literal, $($v:ident => $s:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}`"), other)),
                }
            }
        }
    };
}

names!(Task, "task", Ia => "ia", Debate => "debate", Workflow => "workflow");
names!(Method, "method", Nl => "nl", Sde => "sde", Cipher => "cipher", Raw => "raw", Single => "single");

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Nl,
        Method::Sde,
        Method::Cipher,
        Method::Raw,
        Method::Single,
    ];

    /// Whether messages carry per-layer hidden-state payloads.
    pub fn is_layered(self) -> bool {
        matches!(self, Method::Sde | Method::Raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Workflow".parse::<Task>().unwrap(), Task::Workflow);
        assert!("chat".parse::<Task>().is_err());
    }
}
