//! The ablation ladder.

use serde::{Deserialize, Serialize};

use crate::encoders::Channels;
use crate::error::{Error, Result};

pub const VARIANT_NAMES: [&str; 5] = ["TITLE", "TITLE+RA", "TITLE+ET+RA", "TITLE+NT+RA", "EENR"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub channels: Channels,
}

impl VariantSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        let channels = match name {
            "TITLE" => Channels::TITLE,
            "TITLE+RA" => Channels {
                roles_args: true,
                etype: false,
                category: false,
            },
            "TITLE+ET+RA" => Channels {
                roles_args: true,
                etype: true,
                category: false,
            },
            "TITLE+NT+RA" => Channels {
                roles_args: true,
                etype: false,
                category: true,
            },
            "EENR" => Channels::ALL,
            _ => {
                return Err(Error::UnknownVariant {
                    name: name.to_owned(),
                    valid: VARIANT_NAMES.iter().map(|s| (*s).to_owned()).collect(),
                })
            }
        };
        Ok(Self {
            name: name.to_owned(),
            channels,
        })
    }

    pub fn all() -> Vec<Self> {
        VARIANT_NAMES
            .iter()
            .map(|n| Self::by_name(n).expect("known variant"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_switches() {
        assert_eq!(VariantSpec::by_name("EENR").unwrap().channels, Channels::ALL);
        assert_eq!(VariantSpec::by_name("TITLE").unwrap().channels, Channels::TITLE);
        let nt = VariantSpec::by_name("TITLE+NT+RA").unwrap().channels;
        let et = VariantSpec::by_name("TITLE+ET+RA").unwrap().channels;
        assert!(nt.category && !nt.etype && et.etype && !et.category);
        let err = VariantSpec::by_name("BODY").unwrap_err().to_string();
        assert!(err.contains("TITLE+ET+RA"), "{err}");
    }
}
