//! Small text helpers shared across modules.

/// Keeps at most `max_chars` characters, dropping the middle (75% head, 25% tail).
pub fn clip_middle(text: &str, max_chars: usize) -> String {
    let total = text.chars().count();
    if total <= max_chars {
        return text.to_string();
    }
    let marker = format!("\n[... {} characters omitted ...]\n", total - max_chars);
    let head = max_chars * 3 / 4;
    let tail = max_chars - head;
    let head_text: String = text.chars().take(head).collect();
    let tail_text: String = text.chars().skip(total - tail).collect();
    format!("{head_text}{marker}{tail_text}")
}

/// Largest prefix of `s` that is at most `max` bytes and ends on a char boundary.
pub fn prefix_within(s: &str, max: usize) -> &str {
    let mut end = s.len().min(max);
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Largest suffix of `s` that is at most `max` bytes and starts on a char boundary.
pub fn suffix_within(s: &str, max: usize) -> &str {
    let mut start = s.len().saturating_sub(max);
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}

/// First line of `text`, clipped for one-line digests.
pub fn first_line(text: &str, max_chars: usize) -> String {
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    if line.chars().count() > max_chars {
        let mut s: String = line.chars().take(max_chars).collect();
        s.push('…');
        s
    } else {
        line.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_keeps_head_and_tail() {
        let text: String = (0..100).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let clipped = clip_middle(&text, 20);
        assert!(clipped.starts_with(&text[..15]));
        assert!(clipped.ends_with(&text[95..]));
        assert!(clipped.contains("80 characters omitted"));
        assert_eq!(clip_middle("short", 20), "short");
    }

    #[test]
    fn byte_windows_respect_char_boundaries() {
        let s = "aé€b";
        assert_eq!(prefix_within(s, 2), "a");
        assert_eq!(suffix_within(s, 2), "b");
        assert_eq!(suffix_within(s, 4), "€b");
    }
}
