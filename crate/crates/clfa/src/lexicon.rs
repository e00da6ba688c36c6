//! Sentiment lexicon file: one `token<TAB>value` per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clfa_core::fusion::SentimentLexicon;

use crate::error::{CliError, FormatError, Result};

pub fn parse_lexicon(text: &str) -> Result<SentimentLexicon, FormatError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (token, value) = line
            .split_once('\t')
            .ok_or_else(|| FormatError::syntax(i + 1, "expected `token<TAB>value`"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| FormatError::syntax(i + 1, format!("invalid value {value:?}")))?;
        if !(-1.0..=1.0).contains(&value) {
            return Err(FormatError::syntax(i + 1, format!("value {value} outside [-1, 1]")));
        }
        entries.push((token.to_string(), value));
    }
    SentimentLexicon::new(entries).map_err(|e| FormatError::Inconsistent(e.to_string()))
}

pub fn lexicon_text(lexicon: &SentimentLexicon) -> String {
    let mut s = String::new();
    for (token, value) in lexicon.iter() {
        let _ = writeln!(s, "{token}\t{value}");
    }
    s
}

pub fn read_lexicon(path: &Path) -> Result<SentimentLexicon> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_lexicon(&text).map_err(|e| CliError::in_file(path, e))
}

pub fn write_lexicon(path: &Path, lexicon: &SentimentLexicon) -> Result<()> {
    fs::write(path, lexicon_text(lexicon)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let lex = parse_lexicon("good\t0.8\nbad\t-1\n\ncrash\t-0.25\n").unwrap();
        assert_eq!(lex.get("good"), 0.8);
        assert_eq!(lex.get("bad"), -1.0);
        assert_eq!(lex.get("other"), 0.0);
        assert_eq!(parse_lexicon(&lexicon_text(&lex)).unwrap(), lex);
    }

    #[test]
    fn rejects_out_of_range_and_missing_tab() {
        assert!(matches!(parse_lexicon("a\t1.5"), Err(FormatError::Syntax { line: 1, .. })));
        assert!(matches!(parse_lexicon("ok\t0\na 0.5"), Err(FormatError::Syntax { line: 2, .. })));
        assert!(parse_lexicon("a\tNaN").is_err());
    }
}
