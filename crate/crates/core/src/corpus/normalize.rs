//! Text normalization: HTML removal, entity decoding, whitespace cleanup.

use std::borrow::Cow;
use std::sync::OnceLock;

use regex::Regex;

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Requires a letter (or closing slash) after `<` so emoticons like "<3"
    // survive stripping.
    RE.get_or_init(|| Regex::new(r"</?[a-zA-Z][^>]*>").expect("valid regex"))
}

/// Normalize raw post text.
///
/// Strips HTML tags, decodes common and numeric character entities, converts
/// tabs and line breaks to spaces, collapses runs of spaces, and trims. Tag
/// stripping and entity decoding are repeated until the text stops changing,
/// which makes the whole function idempotent even on doubly encoded input.
/// Total: never fails, empty input maps to empty output.
pub fn normalize_text(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let stripped = tag_regex().replace_all(&current, " ");
        let decoded = decode_entities(&stripped);
        if decoded == current {
            break;
        }
        current = decoded;
    }
    normalize_whitespace(&current)
}

/// Decode HTML character entities in one left-to-right pass. Named entities
/// outside the supported set are left untouched.
fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'&' {
            if let Some((decoded, consumed)) = decode_entity_at(&text[i..]) {
                out.push_str(&decoded);
                i += consumed;
                continue;
            }
        }
        let ch = text[i..].chars().next().expect("in-bounds char");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// Try to decode one entity starting at `rest` (which begins with '&').
/// Returns the decoded text and the number of consumed bytes.
fn decode_entity_at(rest: &str) -> Option<(Cow<'static, str>, usize)> {
    // ';' is ASCII, so a byte scan lands on a char boundary.
    let semi = rest.as_bytes().iter().take(12).position(|&b| b == b';')?;
    let body = &rest[1..semi];
    let consumed = semi + 1;
    let named: Option<&'static str> = match body {
        "amp" => Some("&"),
        "lt" => Some("<"),
        "gt" => Some(">"),
        "quot" => Some("\""),
        "apos" => Some("'"),
        "nbsp" => Some(" "),
        _ => None,
    };
    if let Some(s) = named {
        return Some((Cow::Borrowed(s), consumed));
    }
    let code = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X")) {
        u32::from_str_radix(hex, 16).ok()?
    } else if let Some(dec) = body.strip_prefix('#') {
        dec.parse::<u32>().ok()?
    } else {
        return None;
    };
    let ch = char::from_u32(code)?;
    Some((Cow::Owned(ch.to_string()), consumed))
}

/// Convert tabs/CR/LF to spaces, collapse space runs, trim the ends.
fn normalize_whitespace(text: &str) -> String {
    let replaced: String = text
        .chars()
        .map(|c| if c == '\t' || c == '\r' || c == '\n' { ' ' } else { c })
        .collect();
    let mut out = String::with_capacity(replaced.len());
    let mut prev_space = false;
    for c in replaced.chars() {
        if c == ' ' {
            if !prev_space {
                out.push(c);
            }
            prev_space = true;
        } else {
            out.push(c);
            prev_space = false;
        }
    }
    out.trim().to_string()
}
