//! Shared line discipline for the versioned text formats.
//!
//! Every on-disk artifact (`loca-chain/1`, `loca-cassette/1`, ...) is a UTF-8
//! document of `key: value` lines with LF endings and no trailing whitespace.
//! Values are escaped so that a field always occupies exactly one line and a
//! document canonicalizes to a unique byte sequence.

use std::fmt;

use thiserror::Error;

/// Parse failure for a versioned text document. Carries the 1-based line
/// number when one is known.
#[derive(Debug, Error, PartialEq, Eq)]
pub struct DocError {
    pub line: Option<usize>,
    pub message: String,
}

impl DocError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for DocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Escapes a value onto a single line.
///
/// Backslash, LF, CR, TAB and `|` are always escaped; a trailing space is
/// escaped as `\s` and any other trailing whitespace character as
/// `\u{...}`, so no canonical line ends in whitespace. The encoding is
/// injective, so documents built from it round-trip byte-exactly.
pub fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for ch in value.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '|' => out.push_str("\\|"),
            _ => out.push(ch),
        }
    }
    match out.chars().last() {
        Some(' ') => {
            out.pop();
            out.push_str("\\s");
        }
        Some(ch) if ch.is_whitespace() => {
            out.pop();
            out.push_str(&format!("\\u{{{:x}}}", ch as u32));
        }
        _ => {}
    }
    out
}

/// Inverse of [`escape`]. Rejects unknown escape sequences and dangling
/// backslashes so corrupt documents surface as errors instead of silently
/// decoding to something else.
pub fn unescape(value: &str) -> Result<String, String> {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some('s') => out.push(' '),
            Some('|') => out.push('|'),
            Some('u') => {
                if chars.next() != Some('{') {
                    return Err("`\\u` escape must be `\\u{hex}`".to_string());
                }
                let mut hex = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) if c.is_ascii_hexdigit() && hex.len() < 6 => hex.push(c),
                        _ => return Err("`\\u` escape must be `\\u{hex}`".to_string()),
                    }
                }
                let code = u32::from_str_radix(&hex, 16)
                    .map_err(|_| "`\\u` escape must be `\\u{hex}`".to_string())?;
                match char::from_u32(code) {
                    Some(ch) => out.push(ch),
                    None => return Err(format!("`\\u{{{hex}}}` is not a valid character")),
                }
            }
            Some(other) => return Err(format!("unknown escape sequence `\\{other}`")),
            None => return Err("dangling backslash at end of value".to_string()),
        }
    }
    Ok(out)
}

/// A `key: value` line split into its parts, with position for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field<'a> {
    pub line: usize,
    pub key: &'a str,
    pub raw_value: &'a str,
}

impl Field<'_> {
    /// Unescapes the value, attributing failures to this line.
    pub fn value(&self) -> Result<String, DocError> {
        unescape(self.raw_value).map_err(|e| DocError::at(self.line, e))
    }

    /// Parses the value as an unsigned integer.
    pub fn as_usize(&self) -> Result<usize, DocError> {
        self.raw_value.trim().parse().map_err(|_| {
            DocError::at(
                self.line,
                format!("field `{}` is not a number: `{}`", self.key, self.raw_value),
            )
        })
    }

    /// Parses the value as a boolean (`true`/`false`).
    pub fn as_bool(&self) -> Result<bool, DocError> {
        match self.raw_value.trim() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(DocError::at(
                self.line,
                format!("field `{}` is not a boolean: `{other}`", self.key),
            )),
        }
    }
}

/// Sequential reader over the `key: value` lines of a document.
///
/// Blank lines are record separators in most formats; the reader exposes them
/// as `None` fields so parsers can keep their own record structure.
pub struct DocReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> DocReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    /// Next non-blank line as a field; `Ok(None)` at end of input. Blank
    /// lines are skipped.
    pub fn next_field(&mut self) -> Result<Option<Field<'a>>, DocError> {
        for (idx, line) in self.lines.by_ref() {
            if line.trim().is_empty() {
                continue;
            }
            return Ok(Some(split_field(idx + 1, line)?));
        }
        Ok(None)
    }

    /// Like [`Self::next_field`] but requires the given key.
    pub fn expect_field(&mut self, key: &str) -> Result<Field<'a>, DocError> {
        match self.next_field()? {
            Some(f) if f.key == key => Ok(f),
            Some(f) => Err(DocError::at(
                f.line,
                format!("expected field `{key}`, found `{}`", f.key),
            )),
            None => Err(DocError::new(format!(
                "unexpected end of document, expected field `{key}`"
            ))),
        }
    }

    /// Peeks at the key of the next non-blank line without consuming it.
    pub fn peek_key(&mut self) -> Option<&'a str> {
        while let Some((_, line)) = self.lines.peek() {
            if line.trim().is_empty() {
                self.lines.next();
                continue;
            }
            return line.split(':').next().map(str::trim_end);
        }
        None
    }
}

fn split_field(line_no: usize, line: &str) -> Result<Field<'_>, DocError> {
    match line.split_once(':') {
        Some((key, rest)) => {
            let raw_value = rest.strip_prefix(' ').unwrap_or(rest);
            Ok(Field {
                line: line_no,
                key,
                raw_value,
            })
        }
        None => Err(DocError::at(
            line_no,
            format!("malformed line, expected `key: value`: `{line}`"),
        )),
    }
}

/// Checks the mandatory `format:` header of a document.
pub fn expect_format(reader: &mut DocReader<'_>, version: &str) -> Result<(), DocError> {
    let field = reader.expect_field("format")?;
    if field.raw_value != version {
        return Err(DocError::at(
            field.line,
            format!(
                "unsupported format `{}`, expected `{version}`",
                field.raw_value
            ),
        ));
    }
    Ok(())
}

/// Appends a `key: value` line with the value escaped.
pub fn push_field(out: &mut String, key: &str, value: &str) {
    out.push_str(key);
    out.push_str(": ");
    out.push_str(&escape(value));
    out.push('\n');
}

/// Appends a `key: value` line for a value already known to be line-safe
/// (numbers, enum words, hex digests).
pub fn push_raw(out: &mut String, key: &str, value: impl fmt::Display) {
    use fmt::Write;
    let _ = writeln!(out, "{key}: {value}");
}

/// Encodes two values onto one line as `a | b`. Both halves are escaped
/// individually, so literal pipes in either value cannot be mistaken for
/// the separator.
pub fn encode_pair(a: &str, b: &str) -> String {
    format!("{} | {}", escape(a), escape(b))
}

/// Splits a field written by [`encode_pair`].
pub fn decode_pair(field: &Field<'_>) -> Result<(String, String), DocError> {
    let (a, b) = field.raw_value.split_once(" | ").ok_or_else(|| {
        DocError::at(
            field.line,
            format!("field `{}` must be `left | right`", field.key),
        )
    })?;
    let a = unescape(a).map_err(|e| DocError::at(field.line, e))?;
    let b = unescape(b).map_err(|e| DocError::at(field.line, e))?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_round_trips_control_characters() {
        let samples = [
            "plain text",
            "multi\nline\nvalue",
            "tabs\tand\rreturns",
            "back\\slash and \\n literal",
            "pipe | separated",
            "trailing space ",
            "trailing spaces   ",
            "trailing unicode whitespace\u{a0}",
            "ideographic\u{3000}",
            "",
            " leading space kept",
        ];
        for s in samples {
            let escaped = escape(s);
            assert!(!escaped.contains('\n'), "escaped value spans lines: {s:?}");
            assert!(
                !escaped.ends_with(|c: char| c.is_whitespace()),
                "escaped value ends with whitespace: {escaped:?}"
            );
            assert_eq!(unescape(&escaped).unwrap(), s);
        }
    }

    #[test]
    fn unicode_escape_parses_and_rejects_malformed_forms() {
        assert_eq!(unescape("x\\u{a0}").unwrap(), "x\u{a0}");
        assert!(unescape("x\\u{}").is_err());
        assert!(unescape("x\\u{zz}").is_err());
        assert!(unescape("x\\u{d800}").is_err(), "surrogates are not characters");
        assert!(unescape("x\\ua0").is_err());
    }

    #[test]
    fn unescape_rejects_unknown_sequences() {
        assert!(unescape("bad \\q escape").is_err());
        assert!(unescape("dangling\\").is_err());
    }

    #[test]
    fn reader_reports_line_numbers() {
        let doc = "format: x/1\n\nbroken line\n";
        let mut reader = DocReader::new(doc);
        reader.expect_field("format").unwrap();
        let err = reader.next_field().unwrap_err();
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn expect_format_rejects_other_versions() {
        let mut reader = DocReader::new("format: loca-chain/2\n");
        let err = expect_format(&mut reader, "loca-chain/1").unwrap_err();
        assert!(err.to_string().contains("loca-chain/2"));
    }

    #[test]
    fn pair_encoding_survives_literal_pipes() {
        let cases = [("x", "y"), ("a | b", "c"), ("", "def"), ("sym ", " d | e ")];
        for (a, b) in cases {
            let mut doc = String::new();
            push_raw(&mut doc, "pair", encode_pair(a, b));
            let mut reader = DocReader::new(&doc);
            let field = reader.expect_field("pair").unwrap();
            assert_eq!(decode_pair(&field).unwrap(), (a.to_string(), b.to_string()));
        }
    }
}
