//! Extraction of a structured payload from free-form model output.

use serde_json::Value as Json;

/// Balanced `{...}` or `[...]` spans in order of their opening bracket,
/// ignoring brackets inside string literals.
fn balanced_spans(text: &str) -> impl Iterator<Item = &str> {
    let bytes = text.as_bytes();
    (0..bytes.len())
        .filter(move |&i| bytes[i] == b'{' || bytes[i] == b'[')
        .filter_map(move |start| {
            let mut depth = 0usize;
            let mut in_string = false;
            let mut escaped = false;
            for (off, &b) in bytes[start..].iter().enumerate() {
                if in_string {
                    match b {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_string = false,
                        _ => {}
                    }
                    continue;
                }
                match b {
                    b'"' => in_string = true,
                    b'{' | b'[' => depth += 1,
                    b'}' | b']' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&text[start..start + off + 1]);
                        }
                    }
                    _ => {}
                }
            }
            None
        })
}

/// The first balanced bracket span that parses as JSON and satisfies
/// `accept`. Surrounding prose and code fences are ignored.
pub fn extract_json(text: &str, accept: impl Fn(&Json) -> bool) -> Option<Json> {
    balanced_spans(text)
        .filter_map(|span| serde_json::from_str::<Json>(span).ok())
        .find(|v| accept(v))
}
