//! Line-delimited JSON dataset files: one `{premise, hypothesis, label,
//! language}` record per line. Sentences are stored as space-joined words.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_words, Label, LabeledDataset, NliExample, Split};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    premise: String,
    hypothesis: String,
    label: String,
    language: String,
}

pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, split)
}

pub fn parse_dataset(text: &str, split: Split) -> Result<LabeledDataset> {
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let label: Label = rec.label.parse().map_err(|_| Error::Validation {
            line,
            message: format!("unknown label `{}`", rec.label),
        })?;
        let example = NliExample::new(
            split_words(&rec.premise),
            split_words(&rec.hypothesis),
            label,
            rec.language,
        )
        .map_err(|e| Error::Validation {
            line,
            message: e.to_string(),
        })?;
        examples.push(example);
    }
    Ok(LabeledDataset::new(split, examples))
}

/// Canonical serialization: fixed field order, single spaces, lowercase labels.
pub fn to_jsonl(dataset: &LabeledDataset) -> String {
    let mut out = String::new();
    for ex in &dataset.examples {
        let rec = Record {
            premise: ex.premise.join(" "),
            hypothesis: ex.hypothesis.join(" "),
            label: ex.label.as_str().to_owned(),
            language: ex.language.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(dataset)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"premise":"two men ride","hypothesis":"men ride","label":"entailment","language":"en"}
{"premise":"a dog runs","hypothesis":"a dog runs while cats sleep","label":"Neutral","language":"en"}
{"premise":"a cat sleeps","hypothesis":"a cat not sleeps","label":"CONTRADICTION","language":"en"}
"#;

    #[test]
    fn parses_in_file_order() {
        let ds = parse_dataset(FIXTURE, Split::Train).unwrap();
        assert_eq!(ds.len(), 3);
        let labels: Vec<_> = ds.examples.iter().map(|e| e.label).collect();
        assert_eq!(
            labels,
            vec![Label::Entailment, Label::Neutral, Label::Contradiction]
        );
        assert_eq!(ds.examples[0].premise, vec!["two", "men", "ride"]);
    }

    #[test]
    fn unknown_label_cites_line() {
        let text = "{\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"neutral\",\"language\":\"en\"}\n\
                    {\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"maybe\",\"language\":\"en\"}\n";
        match parse_dataset(text, Split::Dev) {
            Err(Error::Validation { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("maybe"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_parse_error_with_line() {
        let text = "{\"premise\":\"a\",\"label\":\"neutral\",\"language\":\"en\"}\n";
        match parse_dataset(text, Split::Dev) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("hypothesis"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_premise_is_validation_error() {
        let text = "{\"premise\":\" \",\"hypothesis\":\"b\",\"label\":\"neutral\",\"language\":\"en\"}\n";
        assert!(matches!(
            parse_dataset(text, Split::Test),
            Err(Error::Validation { line: 1, .. })
        ));
    }
}
