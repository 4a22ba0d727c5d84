//! Plain-text `key = value` documents with `[section]` headers.
//!
//! Used for run configs and SCM definition files. `#` starts a comment
//! unless it sits inside a double-quoted value (`delimiter = "#"`); the
//! quotes are removed. Blank lines are ignored, and every entry keeps its 1-based line number
//! so callers can report errors against the source.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct KvError {
    pub line: usize,
    pub msg: String,
}

impl KvError {
    pub fn new(line: usize, msg: impl Into<String>) -> Self {
        Self {
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T, KvError>
    where
        T::Err: fmt::Display,
    {
        self.value
            .parse::<T>()
            .map_err(|e| KvError::new(self.line, format!("bad value for `{}`: {e}", self.key)))
    }

    /// Whitespace-separated list of values.
    pub fn parse_list<T: FromStr>(&self) -> Result<Vec<T>, KvError>
    where
        T::Err: fmt::Display,
    {
        self.value
            .split_whitespace()
            .map(|tok| {
                tok.parse::<T>().map_err(|e| {
                    KvError::new(
                        self.line,
                        format!("bad value `{tok}` in `{}`: {e}", self.key),
                    )
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry, KvError> {
        self.get(key)
            .ok_or_else(|| KvError::new(self.line, format!("[{}] is missing `{key}`", self.name)))
    }
}

fn strip_comment(raw: &str) -> &str {
    let mut quoted = false;
    for (i, c) in raw.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &raw[..i],
            _ => {}
        }
    }
    raw
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    pub sections: Vec<Section>,
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = KvDocument::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| KvError::new(line_no, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(KvError::new(line_no, "empty section name"));
                }
                if doc.section(name).is_some() {
                    return Err(KvError::new(line_no, format!("duplicate section [{name}]")));
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    line: line_no,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| KvError::new(line_no, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::new(line_no, "empty key"));
            }
            let section = doc
                .sections
                .last_mut()
                .ok_or_else(|| KvError::new(line_no, "entry outside of any [section]"))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(KvError::new(line_no, format!("duplicate key `{key}`")));
            }
            let value = value.trim();
            let value = match value.strip_prefix('"') {
                Some(rest) => rest
                    .strip_suffix('"')
                    .ok_or_else(|| KvError::new(line_no, "unterminated quoted value"))?,
                None => value,
            };
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: line_no,
            });
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section, KvError> {
        self.section(name)
            .ok_or_else(|| KvError::new(0, format!("missing section [{name}]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let doc =
            KvDocument::parse("# header\n[a]\nx = 1 # trailing\ny=two words\n\n[b]\nz = 0.5 0.5\n")
                .unwrap();
        assert_eq!(doc.sections.len(), 2);
        let a = doc.section("a").unwrap();
        assert_eq!(a.get("x").unwrap().parse::<u32>().unwrap(), 1);
        assert_eq!(a.get("y").unwrap().value, "two words");
        let z = doc.section("b").unwrap().get("z").unwrap();
        assert_eq!(z.parse_list::<f64>().unwrap(), vec![0.5, 0.5]);
        assert_eq!(z.line, 7);
    }

    #[test]
    fn quoted_values_keep_hash() {
        let doc = KvDocument::parse("[t]\nd = \"#\" # note\n").unwrap();
        assert_eq!(doc.section("t").unwrap().get("d").unwrap().value, "#");
        assert_eq!(KvDocument::parse("[t]\nd = \"#\n").unwrap_err().line, 2);
    }

    #[test]
    fn reports_line_numbers() {
        let err = KvDocument::parse("[a]\nx = 1\nnonsense\n").unwrap_err();
        assert_eq!(err.line, 3);
        let err = KvDocument::parse("x = 1\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = KvDocument::parse("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert_eq!(err.line, 3);
        let doc = KvDocument::parse("[a]\nx = q\n").unwrap();
        let err = doc
            .section("a")
            .unwrap()
            .get("x")
            .unwrap()
            .parse::<f64>()
            .unwrap_err();
        assert_eq!(err.line, 2);
    }
}
