//! Conversion of public QA dataset dumps into the dataset (and optionally
//! corpus) JSONL layout used here.
//!
//! * `hotpotqa` and `2wiki`: records with `_id`, `question`, `answer`,
//!   `supporting_facts` (`[[title, sent_idx], ...]`) and `context`
//!   (`[[title, [sentences]], ...]`).
//! * `strategyqa`: records with `qid`, `question` and a boolean `answer`.
//!
//! Input may be a JSON array or JSON lines.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;

use crate::corpus::{Document, QaExample, TaskKind};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("cannot parse input: {0}")]
    Parse(String),
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    HotpotQa,
    TwoWiki,
    StrategyQa,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hotpotqa" => Ok(SourceFormat::HotpotQa),
            "2wiki" | "2wikimultihopqa" => Ok(SourceFormat::TwoWiki),
            "strategyqa" => Ok(SourceFormat::StrategyQa),
            other => Err(format!(
                "unknown dataset format {other:?} (hotpotqa, 2wiki, strategyqa)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Converted {
    pub examples: Vec<QaExample>,
    /// Context paragraphs, deduplicated by title, when the source has them.
    pub documents: Vec<Document>,
}

fn parse_values(input: &str) -> Result<Vec<Value>, ConvertError> {
    let trimmed = input.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| ConvertError::Parse(e.to_string()));
    }
    input
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ConvertError::Parse(e.to_string())))
        .collect()
}

fn str_field<'a>(v: &'a Value, name: &str, index: usize) -> Result<&'a str, ConvertError> {
    v.get(name).and_then(Value::as_str).ok_or_else(|| ConvertError::Record {
        index,
        reason: format!("missing string field {name:?}"),
    })
}

fn multihop(
    v: &Value,
    index: usize,
    docs: &mut Vec<Document>,
    seen: &mut BTreeSet<String>,
) -> Result<QaExample, ConvertError> {
    let qid = str_field(v, "_id", index).or_else(|_| str_field(v, "id", index))?;
    let question = str_field(v, "question", index)?;
    let answer = str_field(v, "answer", index)?;
    let mut gold_titles = Vec::new();
    for fact in v
        .get("supporting_facts")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
    {
        if let Some(t) = fact.get(0).and_then(Value::as_str) {
            if !gold_titles.iter().any(|g: &String| g == t) {
                gold_titles.push(t.to_string());
            }
        }
    }
    for para in v.get("context").and_then(Value::as_array).into_iter().flatten() {
        let (Some(title), Some(sents)) = (
            para.get(0).and_then(Value::as_str),
            para.get(1).and_then(Value::as_array),
        ) else {
            continue;
        };
        if seen.insert(title.to_string()) {
            let text: Vec<&str> = sents.iter().filter_map(Value::as_str).map(str::trim).collect();
            docs.push(Document::new(format!("d{}", docs.len()), title, text.join(" ")));
        }
    }
    Ok(QaExample {
        qid: qid.to_string(),
        question: question.to_string(),
        gold_answers: vec![answer.to_string()],
        gold_titles,
        task_kind: TaskKind::Extractive,
    })
}

fn strategy(v: &Value, index: usize) -> Result<QaExample, ConvertError> {
    let answer = v
        .get("answer")
        .and_then(Value::as_bool)
        .ok_or_else(|| ConvertError::Record {
            index,
            reason: "missing boolean field \"answer\"".into(),
        })?;
    Ok(QaExample {
        qid: str_field(v, "qid", index)?.to_string(),
        question: str_field(v, "question", index)?.to_string(),
        gold_answers: vec![if answer { "yes" } else { "no" }.to_string()],
        gold_titles: Vec::new(),
        task_kind: TaskKind::YesNo,
    })
}

pub fn convert(input: &str, format: SourceFormat, limit: Option<usize>) -> Result<Converted, ConvertError> {
    let values = parse_values(input)?;
    let take = limit.unwrap_or(values.len());
    let mut out = Converted::default();
    let mut seen = BTreeSet::new();
    for (index, v) in values.iter().take(take).enumerate() {
        let ex = match format {
            SourceFormat::HotpotQa | SourceFormat::TwoWiki => multihop(v, index, &mut out.documents, &mut seen)?,
            SourceFormat::StrategyQa => strategy(v, index)?,
        };
        out.examples.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hotpot_record() {
        let raw = r#"[{"_id":"a1","question":"Q?","answer":"Ans","type":"bridge",
            "supporting_facts":[["T1",0],["T2",1],["T1",2]],
            "context":[["T1",["s1. "," s2."]],["T2",["x."]],["T3",["y."]]]}]"#;
        let c = convert(raw, SourceFormat::HotpotQa, None).unwrap();
        assert_eq!(c.examples[0].gold_titles, vec!["T1", "T2"]);
        assert_eq!(c.examples[0].task_kind, TaskKind::Extractive);
        assert_eq!(c.documents.len(), 3);
        assert_eq!(c.documents[0].text, "s1. s2.");
    }

    #[test]
    fn strategy_jsonl_with_limit() {
        let raw = "{\"qid\":\"s1\",\"question\":\"Is it?\",\"answer\":true}\n{\"qid\":\"s2\",\"question\":\"Or?\",\"answer\":false}\n";
        let c = convert(raw, SourceFormat::StrategyQa, Some(1)).unwrap();
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.examples[0].gold_answers, vec!["yes"]);
        assert!(convert("{\"qid\":\"s\"}", SourceFormat::StrategyQa, None).is_err());
        assert!("foo".parse::<SourceFormat>().is_err());
    }
}
