//! Line-oriented `key=value` clause format shared by fault and application specs.
//!
//! One clause per line; `#` starts a comment. Tokens are separated by
//! whitespace outside parentheses. A token of the form `key=...` starts a new
//! field; any other token continues the previous field's value, so
//! `when=at 50000` is the single field `when` with value `at 50000`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("semantic error at line {line}: {msg}")]
    Semantic { line: usize, msg: String },
}

impl SpecError {
    pub fn parse(line: usize, col: usize, msg: impl Into<String>) -> Self {
        SpecError::Parse { line, col, msg: msg.into() }
    }

    pub fn semantic(line: usize, msg: impl Into<String>) -> Self {
        SpecError::Semantic { line, msg: msg.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Field {
    pub key: String,
    pub value: String,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    pub line: usize,
    pub fields: Vec<Field>,
}

impl Clause {
    pub fn get(&self, key: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Field, SpecError> {
        self.get(key).ok_or_else(|| SpecError::parse(self.line, 1, format!("missing field '{key}'")))
    }

    /// Reject any field not in `allowed`, and duplicate keys.
    pub fn only(&self, allowed: &[&str]) -> Result<(), SpecError> {
        for (i, f) in self.fields.iter().enumerate() {
            if !allowed.contains(&f.key.as_str()) {
                return Err(SpecError::parse(self.line, f.col, format!("unknown key '{}'", f.key)));
            }
            if self.fields[..i].iter().any(|g| g.key == f.key) {
                return Err(SpecError::parse(self.line, f.col, format!("duplicate key '{}'", f.key)));
            }
        }
        Ok(())
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn split_tokens(line_no: usize, text: &str) -> Result<Vec<(usize, String)>, SpecError> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(SpecError::parse(line_no, i + 1, "unbalanced ')'"));
                }
            }
            _ => {}
        }
        if ch.is_whitespace() && depth == 0 {
            if !cur.is_empty() {
                out.push((start + 1, std::mem::take(&mut cur)));
            }
            continue;
        }
        if cur.is_empty() {
            start = i;
        }
        cur.push(ch);
    }
    if depth != 0 {
        return Err(SpecError::parse(line_no, text.len() + 1, "unbalanced '('"));
    }
    if !cur.is_empty() {
        out.push((start + 1, cur));
    }
    Ok(out)
}

pub fn tokenize(text: &str) -> Result<Vec<Clause>, SpecError> {
    tokenize_inner(text, false)
}

/// Like [`tokenize`], but every clause starts with a bare keyword, returned
/// as a first field with an empty value.
pub fn tokenize_headed(text: &str) -> Result<Vec<Clause>, SpecError> {
    tokenize_inner(text, true)
}

fn tokenize_inner(text: &str, headed: bool) -> Result<Vec<Clause>, SpecError> {
    let mut clauses = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = raw.split('#').next().unwrap_or("");
        let mut fields: Vec<Field> = Vec::new();
        for (i, (col, tok)) in split_tokens(line_no, body)?.into_iter().enumerate() {
            if headed && i == 0 {
                if !is_ident(&tok) {
                    return Err(SpecError::parse(line_no, col, format!("expected a clause keyword, found '{tok}'")));
                }
                fields.push(Field { key: tok, value: String::new(), col });
                continue;
            }
            match tok.split_once('=') {
                Some((k, v)) if is_ident(k) => {
                    if v.is_empty() {
                        fields.push(Field { key: k.to_string(), value: String::new(), col });
                    } else {
                        fields.push(Field { key: k.to_string(), value: v.to_string(), col });
                    }
                }
                _ => match fields.last_mut() {
                    Some(f) => {
                        if !f.value.is_empty() {
                            f.value.push(' ');
                        }
                        f.value.push_str(&tok);
                    }
                    None => return Err(SpecError::parse(line_no, col, format!("expected key=value, found '{tok}'"))),
                },
            }
        }
        if !fields.is_empty() {
            clauses.push(Clause { line: line_no, fields });
        }
    }
    Ok(clauses)
}

pub fn parse_u64(line: usize, f: &Field, s: &str) -> Result<u64, SpecError> {
    s.trim()
        .parse()
        .map_err(|_| SpecError::parse(line, f.col, format!("'{}': expected an unsigned integer, found '{s}'", f.key)))
}

/// Split `name(k=v,k=v)` into the name and its argument list.
pub fn call_args(line: usize, f: &Field, s: &str) -> Result<(String, Vec<(String, String)>), SpecError> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_string(), Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(SpecError::parse(line, f.col, format!("'{s}': missing ')'")));
    }
    let name = s[..open].to_string();
    let inner = &s[open + 1..s.len() - 1];
    let mut args = Vec::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('=') {
            Some((k, v)) => args.push((k.trim().to_string(), v.trim().to_string())),
            None => args.push((String::new(), part.to_string())),
        }
    }
    Ok((name, args))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuation_tokens_join_previous_value() {
        let c = tokenize("kind=link_kill where=link(0, +x) when=at 50000 # tail").unwrap();
        assert_eq!(c.len(), 1);
        let vals: Vec<_> = c[0].fields.iter().map(|f| (f.key.as_str(), f.value.as_str())).collect();
        assert_eq!(vals, vec![("kind", "link_kill"), ("where", "link(0, +x)"), ("when", "at 50000")]);
        assert_eq!(c[0].fields[1].col, 16);
    }

    #[test]
    fn stray_token_reports_position() {
        assert_eq!(
            tokenize("\n  oops kind=x").unwrap_err(),
            SpecError::parse(2, 3, "expected key=value, found 'oops'")
        );
        assert!(matches!(tokenize("a=f(1"), Err(SpecError::Parse { line: 1, .. })));
    }

    #[test]
    fn call_syntax() {
        let f = Field { key: "behavior".into(), value: String::new(), col: 1 };
        let (n, a) = call_args(1, &f, "source(count=10, start=3)").unwrap();
        assert_eq!(n, "source");
        assert_eq!(a, vec![("count".into(), "10".into()), ("start".into(), "3".into())]);
        assert_eq!(call_args(1, &f, "sink").unwrap(), ("sink".into(), vec![]));
    }
}
