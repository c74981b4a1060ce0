//! Line-oriented `key: [item, item, ...]` files.
//!
//! Used for the channel catalog, the channel cue lexicon and the service
//! alias lexicon. Grammar:
//!
//! ```text
//! file   := line*
//! line   := ws* ( comment | entry )? ws* "\n"
//! comment:= "#" any*
//! entry  := key ws* ":" ws* "[" ( item ( "," item )* ","? )? "]" ws* comment?
//! item   := bare | '"' [^"]* '"'
//! ```
//!
//! Keys may contain spaces. Items are trimmed; bare items may not contain
//! `,`, `[`, `]` or `"`.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListEntry {
    /// 1-based source line.
    pub line: usize,
    pub key: String,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListSyntaxError {
    pub line: usize,
    pub message: String,
}

pub fn parse(source: &str) -> Result<Vec<ListEntry>, ListSyntaxError> {
    let mut entries = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: &str| ListSyntaxError {
            line,
            message: message.to_string(),
        };
        let (key, rest) = text.split_once(':').ok_or_else(|| err("expected `key: [...]`"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(err("empty key"));
        }
        let rest = rest.trim_start();
        let body = rest.strip_prefix('[').ok_or_else(|| err("expected `[` after `:`"))?;
        let (items, tail) = parse_items(body).map_err(|m| err(&m))?;
        let tail = tail.trim();
        if !(tail.is_empty() || tail.starts_with('#')) {
            return Err(err("unexpected text after `]`"));
        }
        entries.push(ListEntry {
            line,
            key: key.to_string(),
            items,
        });
    }
    Ok(entries)
}

fn parse_items(body: &str) -> Result<(Vec<String>, &str), String> {
    let mut items = Vec::new();
    let mut rest = body;
    loop {
        rest = rest.trim_start();
        if let Some(tail) = rest.strip_prefix(']') {
            return Ok((items, tail));
        }
        let item;
        if let Some(quoted) = rest.strip_prefix('"') {
            let end = quoted.find('"').ok_or("unterminated quoted item")?;
            item = quoted[..end].trim().to_string();
            rest = quoted[end + 1..].trim_start();
        } else {
            let end = rest.find([',', ']', '[', '"']).ok_or("missing `]`")?;
            if rest[end..].starts_with(['[', '"']) {
                return Err("unexpected character in item".into());
            }
            item = rest[..end].trim().to_string();
            rest = &rest[end..];
        }
        if item.is_empty() {
            return Err("empty item".into());
        }
        items.push(item);
        if let Some(tail) = rest.strip_prefix(',') {
            rest = tail;
        } else if !rest.starts_with(']') {
            return Err("expected `,` or `]`".into());
        }
    }
}

/// Render one entry. Items containing reserved characters are quoted.
pub fn render_entry(key: &str, items: &[&str]) -> String {
    let rendered: Vec<String> = items
        .iter()
        .map(|i| {
            if i.contains([',', '[', ']', '#']) || i.trim() != *i {
                format!("\"{i}\"")
            } else {
                i.to_string()
            }
        })
        .collect();
    format!("{key}: [{}]", rendered.join(", "))
}
