//! Flat `key = value` configuration text with `[section]` headers.
//!
//! ```text
//! # comment
//! [control]
//! kind = discrete
//! atoms = 1:0.5, -1:0.5
//! ```
//!
//! Keys may repeat inside a section; `get` returns the last occurrence and
//! `get_all` returns every one in file order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: Vec<Section>,
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = vec![Section {
            name: String::new(),
            line: 0,
            entries: Vec::new(),
        }];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() || content.starts_with(';') {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(line, "unterminated section header"))?
                    .trim();
                if !valid_ident(name) {
                    return Err(cfg_err(line, format!("invalid section name `{name}`")));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(cfg_err(line, format!("duplicate section `[{name}]`")));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(line, "expected `key = value` or `[section]`"))?;
            let key = key.trim();
            let value = value.trim();
            if !valid_ident(key) {
                return Err(cfg_err(line, format!("invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(cfg_err(line, format!("empty value for `{key}`")));
            }
            if let Some(current) = sections.last_mut() {
                current.entries.push(Entry {
                    key: key.to_string(),
                    value: value.to_string(),
                    line,
                });
            }
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.section(name).is_some()
    }

    pub fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.section(section)?.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn get_all(&self, section: &str, key: &str) -> Vec<&Entry> {
        self.section(section)
            .map(|s| s.entries.iter().filter(|e| e.key == key).collect())
            .unwrap_or_default()
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&Entry> {
        self.entry(section, key).ok_or_else(|| {
            let line = self.section(section).map(|s| s.line).unwrap_or(0);
            cfg_err(line, format!("missing `{key}` in [{section}]"))
        })
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.entry(section, key).map(parse_f64).transpose()
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        self.entry(section, key)
            .map(|e| {
                parse_u64(&e.value).ok_or_else(|| cfg_err(e.line, format!("`{}` is not an unsigned integer", e.value)))
            })
            .transpose()
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        self.entry(section, key)
            .map(|e| match e.value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                other => Err(cfg_err(e.line, format!("`{other}` is not a boolean"))),
            })
            .transpose()
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.entry(section, key).map(parse_f64_list).transpose()
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    let s = s.replace('_', "");
    if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

pub fn parse_f64(e: &Entry) -> Result<f64> {
    parse_number(&e.value).ok_or_else(|| cfg_err(e.line, format!("`{}` is not a finite number", e.value)))
}

pub fn parse_f64_list(e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|s| parse_number(s.trim()).ok_or_else(|| cfg_err(e.line, format!("`{}` is not a finite number", s.trim()))))
        .collect()
}

/// Finite float, also accepting `inf`/`-inf` spelled out for window bounds.
pub fn parse_number(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let c = Config::parse("seed = 7\n# hi\n[control]\nkind = discrete # trailing\natoms = 1:0.5, -1:0.5\n\n[run]\nreps=100\n").unwrap();
        assert_eq!(c.get("", "seed"), Some("7"));
        assert_eq!(c.get("control", "kind"), Some("discrete"));
        assert_eq!(c.get_u64("run", "reps").unwrap(), Some(100));
        assert_eq!(c.get("run", "missing"), None);
    }

    #[test]
    fn repeated_keys_keep_order() {
        let c = Config::parse("[p]\ncell = 1\ncell = 2\n").unwrap();
        assert_eq!(c.get("p", "cell"), Some("2"));
        let all: Vec<_> = c.get_all("p", "cell").iter().map(|e| e.value.clone()).collect();
        assert_eq!(all, ["1", "2"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [("[a]\nnot a pair\n", 2), ("[bad name]\n", 1), ("[a]\n[a]\n", 2), ("[a\n", 1), ("k =\n", 1)] {
            match Config::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
        let c = Config::parse("[a]\nx = abc\n").unwrap();
        assert!(matches!(c.get_f64("a", "x"), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn number_lists() {
        let c = Config::parse("[a]\nx = 1, 2.5, -inf\n").unwrap();
        assert_eq!(c.get_f64_list("a", "x").unwrap().unwrap(), vec![1.0, 2.5, f64::NEG_INFINITY]);
    }
}
