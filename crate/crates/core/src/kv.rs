//! Line-oriented `key = value` documents shared by the scheme and pipeline
//! configs. `#` starts a comment; keys are case-insensitive.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parse error: 1-based line number and message.
pub(crate) type KvError = (usize, String);

pub(crate) fn parse(text: &str) -> Result<Vec<Entry>, KvError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err((line, format!("expected `key = value`, found `{content}`")));
        };
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err((line, "empty key".to_string()));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err((line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
        }
        entries.push(Entry {
            key,
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(entries)
}

/// Splits `a, b, c` or `[a, "b", c]` into trimmed, unquoted items.
pub(crate) fn list(value: &str) -> Vec<String> {
    let inner = value.trim();
    let inner = inner
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(inner);
    inner
        .split(',')
        .map(|item| unquote(item.trim()).to_string())
        .filter(|item| !item.is_empty())
        .collect()
}

pub(crate) fn unquote(value: &str) -> &str {
    let v = value.trim();
    for q in ['"', '\''] {
        if let Some(s) = v.strip_prefix(q).and_then(|s| s.strip_suffix(q)) {
            return s;
        }
    }
    v
}
