//! Reader and writer for the configuration syntax: named top-level sections,
//! each holding `key: value` entries one indentation level deep. Values are
//! scalars (quoted or plain) or flat sequences, written either inline
//! (`["a", "b"]`) or as a block of `- item` lines. This is a strict subset
//! of YAML; anything outside it is rejected with a line number.

use std::fmt::Write as _;

use super::ConfigError;

#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(Scalar),
    List(Vec<Scalar>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Scalar(Scalar::Str(s.into()))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<(String, Value)>,
}

/// A parsed document with section and key order preserved.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line, message: msg.into() }
}

/// Removes a trailing `# comment` that is outside quotes.
fn strip_comment(line: &str) -> &str {
    let mut in_double = false;
    let mut in_single = false;
    let mut escaped = false;
    let mut prev_space = true;
    for (i, c) in line.char_indices() {
        if in_double {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_double = false;
            }
        } else if in_single {
            if c == '\'' {
                in_single = false;
            }
        } else if c == '"' {
            in_double = true;
        } else if c == '\'' {
            in_single = true;
        } else if c == '#' && prev_space {
            return &line[..i];
        }
        prev_space = c == ' ' || c == '\t';
    }
    line
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses a double-quoted string starting at `s[0] == '"'`; returns the value
/// and the remaining input.
fn parse_double(s: &str, line: usize) -> Result<(String, &str), ConfigError> {
    let mut out = String::new();
    let mut chars = s.char_indices().skip(1);
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Ok((out, &s[i + 1..])),
            '\\' => {
                let (_, e) = chars.next().ok_or_else(|| err(line, "unterminated escape"))?;
                match e {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    '/' => out.push('/'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    'u' => {
                        let mut code = 0u32;
                        for _ in 0..4 {
                            let (_, h) = chars.next().ok_or_else(|| err(line, "short \\u escape"))?;
                            code = code * 16 + h.to_digit(16).ok_or_else(|| err(line, "bad \\u escape"))?;
                        }
                        out.push(char::from_u32(code).ok_or_else(|| err(line, "invalid \\u code point"))?);
                    }
                    other => return Err(err(line, format!("unsupported escape \\{other}"))),
                }
            }
            c => out.push(c),
        }
    }
    Err(err(line, "unterminated double-quoted string"))
}

fn parse_single(s: &str, line: usize) -> Result<(String, &str), ConfigError> {
    let mut out = String::new();
    let bytes = s.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        if bytes[i] == b'\'' {
            if bytes.get(i + 1) == Some(&b'\'') {
                out.push('\'');
                i += 2;
                continue;
            }
            return Ok((out, &s[i + 1..]));
        }
        let ch = s[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    Err(err(line, "unterminated single-quoted string"))
}

fn plain_scalar(s: &str) -> Scalar {
    match s {
        "" | "~" | "null" => return Scalar::Null,
        "true" => return Scalar::Bool(true),
        "false" => return Scalar::Bool(false),
        _ => {}
    }
    let numeric = s.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.');
    if numeric {
        if let Ok(i) = s.parse::<i64>() {
            return Scalar::Int(i);
        }
        if s.chars().any(|c| c.is_ascii_digit()) && !s.contains(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
            if let Ok(f) = s.parse::<f64>() {
                return Scalar::Float(f);
            }
        }
    }
    Scalar::Str(s.to_string())
}

/// Parses one scalar and returns it with the unconsumed rest.
fn scalar_prefix<'a>(s: &'a str, line: usize, stops: &[char]) -> Result<(Scalar, &'a str), ConfigError> {
    if s.starts_with('"') {
        let (v, rest) = parse_double(s, line)?;
        Ok((Scalar::Str(v), rest))
    } else if s.starts_with('\'') {
        let (v, rest) = parse_single(s, line)?;
        Ok((Scalar::Str(v), rest))
    } else {
        let end = s.find(|c| stops.contains(&c)).unwrap_or(s.len());
        let text = s[..end].trim();
        if text.starts_with(['[', '{', '&', '*', '!', '|', '>', '%', '@', '`']) {
            return Err(err(line, format!("unsupported value syntax {text:?}")));
        }
        if text.contains(": ") || text.ends_with(':') {
            return Err(err(line, format!("nested mappings are not supported: {text:?}")));
        }
        Ok((plain_scalar(text), &s[end..]))
    }
}

fn expect_end(rest: &str, line: usize) -> Result<(), ConfigError> {
    if rest.trim().is_empty() {
        Ok(())
    } else {
        Err(err(line, format!("unexpected trailing text {:?}", rest.trim())))
    }
}

fn parse_flow_list(s: &str, line: usize) -> Result<Vec<Scalar>, ConfigError> {
    let mut rest = s[1..].trim_start();
    let mut items = Vec::new();
    if let Some(after) = rest.strip_prefix(']') {
        expect_end(after, line)?;
        return Ok(items);
    }
    loop {
        let (item, after) = scalar_prefix(rest, line, &[',', ']'])?;
        if matches!(&item, Scalar::Null) && !rest.starts_with(['~', 'n']) {
            return Err(err(line, "empty list item"));
        }
        items.push(item);
        let after = after.trim_start();
        if let Some(r) = after.strip_prefix(',') {
            rest = r.trim_start();
        } else if let Some(r) = after.strip_prefix(']') {
            expect_end(r, line)?;
            return Ok(items);
        } else {
            return Err(err(line, "expected ',' or ']' in list"));
        }
    }
}

fn parse_value(s: &str, line: usize) -> Result<Value, ConfigError> {
    let s = s.trim();
    if s.starts_with('[') {
        return parse_flow_list(s, line).map(Value::List);
    }
    let (v, rest) = scalar_prefix(s, line, &[])?;
    expect_end(rest, line)?;
    Ok(Value::Scalar(v))
}

fn indent_of(raw: &str, line: usize) -> Result<usize, ConfigError> {
    let ws = &raw[..raw.len() - raw.trim_start().len()];
    if ws.contains('\t') {
        return Err(err(line, "tabs are not allowed in indentation"));
    }
    Ok(ws.len())
}

pub fn parse_document(text: &str) -> Result<Document, ConfigError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut doc = Document::default();
    let mut entry_indent: Option<usize> = None;
    // Key awaiting block-sequence items, with the indent of its line.
    let mut open_list: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.trim().is_empty() {
            continue;
        }
        let content = content.trim_end();
        let indent = indent_of(content, line)?;
        let body = content.trim_start();

        if body == "-" || body.starts_with("- ") {
            let section = doc.sections.last_mut().ok_or_else(|| err(line, "list item outside a section"))?;
            let key_indent = open_list.ok_or_else(|| err(line, "list item without a key"))?;
            if indent < key_indent {
                return Err(err(line, "list item is indented less than its key"));
            }
            let item_text = body[1..].trim();
            if item_text.starts_with('[') {
                return Err(err(line, "nested lists are not supported"));
            }
            let (item, rest) = scalar_prefix(item_text, line, &[])?;
            expect_end(rest, line)?;
            let (_, value) = section.entries.last_mut().expect("open list implies an entry");
            match value {
                Value::List(items) => items.push(item),
                v => *v = Value::List(vec![item]),
            }
            continue;
        }

        let colon = body.find(':').ok_or_else(|| err(line, format!("expected `key: value`, found {body:?}")))?;
        let key = &body[..colon];
        let rest = &body[colon + 1..];
        if !valid_key(key) {
            return Err(err(line, format!("invalid key {key:?}")));
        }
        if !rest.is_empty() && !rest.starts_with(' ') {
            return Err(err(line, "a space must follow ':'"));
        }

        if indent == 0 {
            if !rest.trim().is_empty() {
                return Err(err(line, format!("top-level key {key} must be a section header")));
            }
            if doc.sections.iter().any(|s| s.name == key) {
                return Err(err(line, format!("duplicate section {key}")));
            }
            doc.sections.push(Section { name: key.to_string(), line, entries: Vec::new() });
            entry_indent = None;
            open_list = None;
            continue;
        }

        let section = doc.sections.last_mut().ok_or_else(|| err(line, "entry outside a section"))?;
        match entry_indent {
            None => entry_indent = Some(indent),
            Some(i) if i != indent => {
                return Err(err(line, format!("inconsistent indentation ({indent} spaces, section uses {i})")))
            }
            _ => {}
        }
        if section.entries.iter().any(|(k, _)| k == key) {
            return Err(err(line, format!("duplicate key {}.{key}", section.name)));
        }
        let value = parse_value(rest, line)?;
        open_list = matches!(value, Value::Scalar(Scalar::Null) if rest.trim().is_empty()).then_some(indent);
        section.entries.push((key.to_string(), value));
    }
    Ok(doc)
}

fn render_scalar(out: &mut String, s: &Scalar) {
    match s {
        Scalar::Str(v) => out.push_str(&serde_json::to_string(v).expect("strings serialize")),
        Scalar::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Scalar::Float(f) if f.is_finite() => out.push_str(&serde_json::to_string(f).expect("finite float")),
        Scalar::Float(f) if f.is_nan() => out.push_str(".nan"),
        Scalar::Float(f) => out.push_str(if *f > 0.0 { ".inf" } else { "-.inf" }),
        Scalar::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Scalar::Null => out.push_str("null"),
    }
}

pub fn render_value(out: &mut String, v: &Value) {
    match v {
        Value::Scalar(s) => render_scalar(out, s),
        Value::List(items) => {
            out.push('[');
            for (i, s) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_scalar(out, s);
            }
            out.push(']');
        }
    }
}

/// Canonical text: sections separated by blank lines, two-space indentation,
/// strings double-quoted, sequences inline.
pub fn render_document(doc: &Document) -> String {
    let mut out = String::new();
    for (i, section) in doc.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "{}:", section.name);
        for (k, v) in &section.entries {
            let _ = write!(out, "  {k}: ");
            render_value(&mut out, v);
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(doc: &Document, section: &str) -> Vec<(String, Value)> {
        doc.sections.iter().find(|s| s.name == section).unwrap().entries.clone()
    }

    #[test]
    fn scalars_and_lists() {
        let doc = parse_document(
            "general_args:\n  task: \"conversion\"\n  backend: [\"pt\",\"tf\"]\n  n: 4\n  e: ''\n  plain: some words # note\n  f: 0.5\n",
        )
        .unwrap();
        let e = entries(&doc, "general_args");
        assert_eq!(e[0], ("task".into(), Value::str("conversion")));
        assert_eq!(e[1].1, Value::List(vec![Scalar::Str("pt".into()), Scalar::Str("tf".into())]));
        assert_eq!(e[2].1, Value::Scalar(Scalar::Int(4)));
        assert_eq!(e[3].1, Value::str(""));
        assert_eq!(e[4].1, Value::str("some words"));
        assert_eq!(e[5].1, Value::Scalar(Scalar::Float(0.5)));
    }

    #[test]
    fn block_sequences() {
        let doc = parse_document("s:\n  items:\n    - a\n    - \"b c\"\n  after: 1\n").unwrap();
        let e = entries(&doc, "s");
        assert_eq!(e[0].1, Value::List(vec![Scalar::Str("a".into()), Scalar::Str("b c".into())]));
        assert_eq!(e[1].1, Value::Scalar(Scalar::Int(1)));
    }

    #[test]
    fn hash_inside_quotes_is_not_a_comment() {
        let doc = parse_document("s:\n  k: \"a # b\"\n").unwrap();
        assert_eq!(entries(&doc, "s")[0].1, Value::str("a # b"));
    }

    #[test]
    fn quoted_escapes() {
        let doc = parse_document("s:\n  a: \"q\\\"\\u00e9\"\n  b: 'it''s'\n").unwrap();
        assert_eq!(entries(&doc, "s")[0].1, Value::str("q\"é"));
        assert_eq!(entries(&doc, "s")[1].1, Value::str("it's"));
    }

    #[test]
    fn rejects_out_of_subset_input() {
        for (text, needle) in [
            ("top: 1\n", "section header"),
            ("  k: v\n", "outside a section"),
            ("s:\n  k: v\n    j: w\n", "inconsistent indentation"),
            ("s:\n  k: \"open\n", "unterminated"),
            ("s:\n  k: [a, b\n", "expected ','"),
            ("s:\n  k: {a: 1}\n", "unsupported"),
            ("s:\n  k: 1\n  k: 2\n", "duplicate key"),
            ("s:\ns:\n", "duplicate section"),
            ("s:\n\tk: v\n", "tabs"),
            ("s:\n  just text\n", "expected `key: value`"),
        ] {
            let e = parse_document(text).unwrap_err().to_string();
            assert!(e.contains(needle), "{text:?} -> {e}");
        }
    }

    #[test]
    fn render_is_reparseable() {
        let text = "a:\n  x: [\"p\", 3, true]\n  y: \"\"\n\nb:\n  z: -2.5\n";
        let doc = parse_document(text).unwrap();
        assert_eq!(render_document(&doc), text);
        assert_eq!(parse_document(&render_document(&doc)).unwrap(), doc);
    }
}
