//! `vocab.tsv`: header `word\ttoken_id\tzipf\tin_lexicon\tpiece_count`, one row per token.

use super::{TokenId, VocabMeta};
use crate::error::{Error, Result};

pub const HEADER: &str = "word\ttoken_id\tzipf\tin_lexicon\tpiece_count";

/// Parses vocab TSV text. An empty file or a header-only file yields an empty list.
pub fn parse(text: &str, source: &str) -> Result<Vec<VocabMeta>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, h)) if h.trim_end_matches('\r') == HEADER => {}
        Some((_, h)) => {
            return Err(Error::Format(format!("{source}:1: expected header {HEADER:?}, got {h:?}")))
        }
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let bad = |msg: String| Error::Format(format!("{source}:{lineno}: {msg}"));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let token_id: TokenId = fields[1]
            .parse()
            .map_err(|_| bad(format!("token_id {:?} is not a non-negative integer", fields[1])))?;
        let zipf: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("zipf {:?} is not a number", fields[2])))?;
        if !zipf.is_finite() {
            return Err(bad(format!("zipf {:?} is not finite", fields[2])));
        }
        let in_lexicon = match fields[3] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(bad(format!("in_lexicon {other:?} must be 0 or 1"))),
        };
        let piece_count: u32 = fields[4]
            .parse()
            .map_err(|_| bad(format!("piece_count {:?} is not a non-negative integer", fields[4])))?;
        out.push(VocabMeta { word: fields[0].to_string(), token_id, zipf, in_lexicon, piece_count });
    }
    Ok(out)
}

/// Renders vocab rows. Numbers use the shortest round-trip representation.
pub fn render(rows: &[VocabMeta]) -> String {
    let mut s = String::with_capacity(32 * (rows.len() + 1));
    s.push_str(HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.word,
            r.token_id,
            r.zipf,
            u8::from(r.in_lexicon),
            r.piece_count
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let rows = vec![
            VocabMeta { word: "cat".into(), token_id: 7, zipf: 4.25, in_lexicon: true, piece_count: 1 },
            VocabMeta { word: "xq".into(), token_id: 9, zipf: 0.1 + 0.2, in_lexicon: false, piece_count: 3 },
        ];
        let text = render(&rows);
        assert_eq!(parse(&text, "v").unwrap(), rows);
    }

    #[test]
    fn empty_and_header_only() {
        assert!(parse("", "v").unwrap().is_empty());
        assert!(parse(&format!("{HEADER}\n"), "v").unwrap().is_empty());
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = format!("{HEADER}\ncat\t1\t4.0\t1\t1\ndog\tx\t4.0\t1\t1\n");
        let err = parse(&text, "v.tsv").unwrap_err().to_string();
        assert!(err.contains("v.tsv:3"), "{err}");
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(matches!(parse("a\tb\n", "v"), Err(Error::Format(_))));
    }
}
