//! `${path}` reference syntax inside string scalars.
//!
//! `$$` is an escaped dollar sign, so `$${x}` is the literal text `${x}`.
//! Any other `$` is kept as-is.

use super::path::ConfigPath;

#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Literal(String),
    Reference(ConfigPath),
}

/// A parsed string scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    /// No references; the unescaped text.
    Plain(String),
    /// The whole scalar is one reference; the referenced value keeps its type.
    Whole(ConfigPath),
    /// References spliced into surrounding text.
    Spliced(Vec<Piece>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("unterminated reference starting at byte {0}")]
    Unterminated(usize),
    #[error("invalid reference path `{0}`")]
    BadPath(String),
}

/// True if `text` holds at least one unescaped reference.
pub fn has_reference(text: &str) -> bool {
    matches!(parse(text), Ok(Template::Whole(_) | Template::Spliced(_)) | Err(_))
}

pub fn parse(text: &str) -> Result<Template, TemplateError> {
    if !text.contains('$') {
        return Ok(Template::Plain(text.to_owned()));
    }
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' && i + 1 < bytes.len() {
            match bytes[i + 1] {
                b'$' => {
                    literal.push('$');
                    i += 2;
                    continue;
                }
                b'{' => {
                    let close = text[i + 2..]
                        .find('}')
                        .ok_or(TemplateError::Unterminated(i))?;
                    let inner = &text[i + 2..i + 2 + close];
                    let path = ConfigPath::parse(inner.trim())
                        .map_err(|_| TemplateError::BadPath(inner.to_owned()))?;
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Reference(path));
                    i += close + 3;
                    continue;
                }
                _ => {}
            }
        }
        let ch = text[i..].chars().next().expect("in bounds");
        literal.push(ch);
        i += ch.len_utf8();
    }
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(match pieces.as_slice() {
        [] => Template::Plain(String::new()),
        [Piece::Reference(p)] => Template::Whole(p.clone()),
        [Piece::Literal(l)] => Template::Plain(l.clone()),
        _ => Template::Spliced(pieces),
    })
}

/// Escapes `$` so the text survives [`parse`] unchanged.
pub fn escape(text: &str) -> String {
    text.replace('$', "$$")
}
