use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_EVENT_TYPES: usize = 65;
pub const MAX_CLASSES: usize = 27;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTypeDef {
    pub name: String,
    pub roles: Vec<String>,
}

/// The tag space source: event types, their ordered roles, and coarse classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct EventSchema {
    types: Vec<EventTypeDef>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    event_types: Vec<EventTypeDef>,
}

impl TryFrom<SchemaFile> for EventSchema {
    type Error = Error;

    fn try_from(f: SchemaFile) -> Result<Self> {
        EventSchema::new(f.event_types)
    }
}

impl From<EventSchema> for SchemaFile {
    fn from(s: EventSchema) -> Self {
        SchemaFile {
            event_types: s.types,
        }
    }
}

/// Coarse class of a qualified event type: the part before the first `/`.
pub fn class_of(event_type: &str) -> &str {
    event_type.split('/').next().unwrap_or(event_type)
}

impl EventSchema {
    pub fn new(types: Vec<EventTypeDef>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Schema("no event types".into()));
        }
        if types.len() > MAX_EVENT_TYPES {
            return Err(Error::Schema(format!(
                "{} event types exceeds the limit of {MAX_EVENT_TYPES}",
                types.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, t) in types.iter().enumerate() {
            if t.name.trim().is_empty() {
                return Err(Error::Schema("empty event type name".into()));
            }
            if index.insert(t.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate event type `{}`", t.name)));
            }
            if t.roles.is_empty() {
                return Err(Error::Schema(format!("event type `{}` has no roles", t.name)));
            }
            let mut seen = BTreeSet::new();
            for r in &t.roles {
                if r.trim().is_empty() || !seen.insert(r) {
                    return Err(Error::Schema(format!(
                        "event type `{}` has an empty or duplicate role `{r}`",
                        t.name
                    )));
                }
            }
        }
        let schema = Self { types, index };
        let classes = schema.classes().len();
        if classes > MAX_CLASSES {
            return Err(Error::Schema(format!(
                "{classes} classes exceeds the limit of {MAX_CLASSES}"
            )));
        }
        Ok(schema)
    }

    pub fn types(&self) -> &[EventTypeDef] {
        &self.types
    }

    pub fn event_type_names(&self) -> Vec<String> {
        self.types.iter().map(|t| t.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn type_index(&self, event_type: &str) -> Option<usize> {
        self.index.get(event_type).copied()
    }

    pub fn roles(&self, event_type: &str) -> Option<&[String]> {
        self.type_index(event_type).map(|i| self.types[i].roles.as_slice())
    }

    pub fn role_index(&self, event_type: &str, role: &str) -> Option<usize> {
        self.roles(event_type)?.iter().position(|r| r == role)
    }

    pub fn has_pair(&self, event_type: &str, role: &str) -> bool {
        self.role_index(event_type, role).is_some()
    }

    pub fn class_of<'a>(&self, event_type: &'a str) -> &'a str {
        class_of(event_type)
    }

    /// Distinct classes in first-appearance order.
    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.types {
            let c = class_of(&t.name);
            if !out.iter().any(|x| x == c) {
                out.push(c.to_owned());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn def(name: &str, roles: &[&str]) -> EventTypeDef {
        EventTypeDef {
            name: name.into(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
        }
    }

    #[test]
    fn class_is_prefix() {
        let s = EventSchema::new(vec![
            def("Organizational-Relations/Layoff", &["layoff executor", "number of job cut"]),
            def("Deal/Acquisition", &["acquirer"]),
        ])
        .unwrap();
        assert_eq!(s.class_of("Organizational-Relations/Layoff"), "Organizational-Relations");
        assert_eq!(s.classes(), vec!["Organizational-Relations", "Deal"]);
        assert!(s.has_pair("Deal/Acquisition", "acquirer"));
        assert!(!s.has_pair("Deal/Acquisition", "layoff executor"));
    }

    #[test]
    fn rejects_duplicates_and_oversize() {
        assert!(EventSchema::new(vec![def("A/x", &["r"]), def("A/x", &["r"])]).is_err());
        assert!(EventSchema::new(vec![def("A/x", &["r", "r"])]).is_err());
        assert!(EventSchema::new(vec![def("A/x", &[])]).is_err());
        let many: Vec<_> = (0..66).map(|i| def(&format!("C/t{i}"), &["r"])).collect();
        assert!(EventSchema::new(many).is_err());
        let classes: Vec<_> = (0..28).map(|i| def(&format!("C{i}/t"), &["r"])).collect();
        assert!(EventSchema::new(classes).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let s = EventSchema::new(vec![def("A/x", &["r1", "r2"])]).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        let back: EventSchema = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.type_index("A/x"), Some(0));
    }
}
