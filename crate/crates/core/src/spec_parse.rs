//! Parsing of the compact `name:key=value,key=value` strings used on the
//! command line for functions and distributions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SpecParts<'a> {
    pub head: &'a str,
    pub params: Vec<(&'a str, &'a str)>,
}

impl<'a> SpecParts<'a> {
    pub fn parse(spec: &'a str) -> Result<Self> {
        let spec = spec.trim();
        let (head, rest) = match spec.find(':') {
            Some(i) => (&spec[..i], Some(&spec[i + 1..])),
            None => (spec, None),
        };
        if head.is_empty() {
            return Err(Error::Config(format!("empty name in spec {spec:?}")));
        }
        let mut params = Vec::new();
        if let Some(rest) = rest {
            for item in split_top_level(rest) {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                let (k, v) = item.split_once('=').ok_or_else(|| {
                    Error::Config(format!("expected key=value, got {item:?} in {spec:?}"))
                })?;
                params.push((k.trim(), v.trim()));
            }
        }
        Ok(Self {
            head: head.trim(),
            params,
        })
    }

    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("parameter {key}={v:?} is not a number"))),
        }
    }

    pub fn f64_required(&self, key: &str) -> Result<f64> {
        let v = self.get(key).ok_or_else(|| {
            Error::Config(format!("missing parameter {key:?} for {:?}", self.head))
        })?;
        v.parse::<f64>()
            .map_err(|_| Error::Config(format!("parameter {key}={v:?} is not a number")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| *x >= 0.0 && x.fract() == 0.0)
                .map(|x| x as usize)
                .ok_or_else(|| Error::Config(format!("parameter {key}={v:?} is not a count"))),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.params {
            if !allowed.contains(k) {
                return Err(Error::Config(format!(
                    "unknown parameter {k:?} for {:?} (expected one of {allowed:?})",
                    self.head
                )));
            }
        }
        Ok(())
    }
}

/// Split on commas that are not nested inside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}
