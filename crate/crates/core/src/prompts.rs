//! Per-dataset-family prompt sets.
//!
//! A prompt directory holds one sub-directory per family and one plain-text
//! file per stage (`external_augment.txt`, `filter_extract.txt`, ...), plus
//! `few_shot_knowledge.json`, the three knowledge blocks that fill the
//! `{example_knowledge_N}` slots of the few-shot exemplars. The files under
//! `prompts/` in this crate are compiled in as the defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{PromptTemplate, TemplateError};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt {stage} for {family} is missing placeholder {{{name}}}")]
    MissingSlot {
        family: String,
        stage: String,
        name: String,
    },
    #[error("bad few-shot knowledge file: {0}")]
    FewShot(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFamily {
    HotpotqaLike,
    TwowikiLike,
    StrategyqaLike,
}

impl DatasetFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetFamily::HotpotqaLike => "hotpotqa_like",
            DatasetFamily::TwowikiLike => "twowiki_like",
            DatasetFamily::StrategyqaLike => "strategyqa_like",
        }
    }

    pub fn filter_strategy(&self) -> FilterStrategy {
        match self {
            DatasetFamily::HotpotqaLike | DatasetFamily::TwowikiLike => FilterStrategy::TwoStageTopic,
            DatasetFamily::StrategyqaLike => FilterStrategy::SingleStage,
        }
    }
}

impl fmt::Display for DatasetFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hotpotqa_like" | "hotpotqa" => Ok(DatasetFamily::HotpotqaLike),
            "twowiki_like" | "2wiki" | "twowiki" => Ok(DatasetFamily::TwowikiLike),
            "strategyqa_like" | "strategyqa" => Ok(DatasetFamily::StrategyqaLike),
            other => Err(format!("unknown dataset family {other:?}")),
        }
    }
}

/// How the LLM filter is staged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStrategy {
    /// topic → discussion → id extraction
    TwoStageTopic,
    /// discussion → id extraction
    SingleStage,
}

impl FilterStrategy {
    pub fn stage_count(&self) -> usize {
        match self {
            FilterStrategy::TwoStageTopic => 3,
            FilterStrategy::SingleStage => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    ExternalAugment,
    InternalAugment,
    FilterTopic,
    FilterDiscuss,
    FilterExtract,
    AnswerCot,
    AnswerDirect,
    AnswerExtract,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::ExternalAugment,
        Stage::InternalAugment,
        Stage::FilterTopic,
        Stage::FilterDiscuss,
        Stage::FilterExtract,
        Stage::AnswerCot,
        Stage::AnswerDirect,
        Stage::AnswerExtract,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            Stage::ExternalAugment => "external_augment.txt",
            Stage::InternalAugment => "internal_augment.txt",
            Stage::FilterTopic => "filter_topic.txt",
            Stage::FilterDiscuss => "filter_discuss.txt",
            Stage::FilterExtract => "filter_extract.txt",
            Stage::AnswerCot => "answer_cot.txt",
            Stage::AnswerDirect => "answer_direct.txt",
            Stage::AnswerExtract => "answer_extract.txt",
        }
    }

    fn required_slots(&self) -> &'static [&'static str] {
        match self {
            Stage::ExternalAugment | Stage::AnswerCot | Stage::AnswerDirect => &["knowledge", "question"],
            Stage::InternalAugment => &["question"],
            Stage::FilterTopic => &["question"],
            Stage::FilterDiscuss => &["knowledge_list", "question"],
            Stage::FilterExtract => &["context", "knowledge_list", "question"],
            Stage::AnswerExtract => &["context", "question"],
        }
    }

    fn needed_by(&self, family: DatasetFamily) -> bool {
        !(*self == Stage::FilterTopic && family.filter_strategy() == FilterStrategy::SingleStage)
    }
}

pub const FEW_SHOT_FILE: &str = "few_shot_knowledge.json";

macro_rules! builtin {
    ($fam:literal) => {
        [
            include_str!(concat!("../prompts/", $fam, "/external_augment.txt")),
            include_str!(concat!("../prompts/", $fam, "/internal_augment.txt")),
            "",
            include_str!(concat!("../prompts/", $fam, "/filter_discuss.txt")),
            include_str!(concat!("../prompts/", $fam, "/filter_extract.txt")),
            include_str!(concat!("../prompts/", $fam, "/answer_cot.txt")),
            include_str!(concat!("../prompts/", $fam, "/answer_direct.txt")),
            include_str!(concat!("../prompts/", $fam, "/answer_extract.txt")),
        ]
    };
}

fn builtin_files(family: DatasetFamily) -> ([&'static str; 8], &'static str) {
    match family {
        DatasetFamily::HotpotqaLike => {
            let mut files = builtin!("hotpotqa_like");
            files[2] = include_str!("../prompts/hotpotqa_like/filter_topic.txt");
            (files, include_str!("../prompts/hotpotqa_like/few_shot_knowledge.json"))
        }
        DatasetFamily::TwowikiLike => {
            let mut files = builtin!("twowiki_like");
            files[2] = include_str!("../prompts/twowiki_like/filter_topic.txt");
            (files, include_str!("../prompts/twowiki_like/few_shot_knowledge.json"))
        }
        DatasetFamily::StrategyqaLike => (
            builtin!("strategyqa_like"),
            include_str!("../prompts/strategyqa_like/few_shot_knowledge.json"),
        ),
    }
}

/// A single trailing newline in a prompt file is an editor artifact.
fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix("\r\n").or_else(|| s.strip_suffix('\n')).unwrap_or(s)
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    family: DatasetFamily,
    templates: Vec<(Stage, PromptTemplate)>,
    few_shot: Vec<String>,
}

impl PromptSet {
    pub fn builtin(family: DatasetFamily) -> Self {
        let (files, few_shot) = builtin_files(family);
        Self::from_parts(
            family,
            |stage| {
                let i = Stage::ALL.iter().position(|s| *s == stage).expect("stage listed");
                Ok(files[i].to_string())
            },
            few_shot,
        )
        .expect("built-in prompts are valid")
    }

    /// Loads `dir/<family>/*.txt` and the few-shot knowledge file.
    pub fn load(dir: impl AsRef<Path>, family: DatasetFamily) -> Result<Self, PromptError> {
        let base = dir.as_ref().join(family.as_str());
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let few_shot = read(&base.join(FEW_SHOT_FILE))?;
        Self::from_parts(family, |stage| read(&base.join(stage.file_name())), &few_shot)
    }

    fn from_parts(
        family: DatasetFamily,
        mut source: impl FnMut(Stage) -> Result<String, PromptError>,
        few_shot: &str,
    ) -> Result<Self, PromptError> {
        let few_shot: Vec<String> = serde_json::from_str(few_shot).map_err(|e| PromptError::FewShot(e.to_string()))?;
        let mut templates = Vec::new();
        for stage in Stage::ALL {
            if !stage.needed_by(family) {
                continue;
            }
            let body = source(stage)?;
            let tpl = PromptTemplate::new(
                format!("{}/{}", family.as_str(), stage.file_name()),
                strip_final_newline(&body),
            );
            for slot in stage.required_slots() {
                if !tpl.has_placeholder(slot) {
                    return Err(PromptError::MissingSlot {
                        family: family.to_string(),
                        stage: stage.file_name().to_string(),
                        name: slot.to_string(),
                    });
                }
            }
            for slot in tpl.placeholders() {
                if let Some(n) = few_shot_index(slot) {
                    if n == 0 || n > few_shot.len() {
                        return Err(PromptError::FewShot(format!(
                            "{} uses {{{slot}}} but only {} knowledge blocks are packaged",
                            stage.file_name(),
                            few_shot.len()
                        )));
                    }
                }
            }
            templates.push((stage, tpl));
        }
        Ok(Self {
            family,
            templates,
            few_shot,
        })
    }

    pub fn family(&self) -> DatasetFamily {
        self.family
    }

    pub fn filter_strategy(&self) -> FilterStrategy {
        self.family.filter_strategy()
    }

    pub fn template(&self, stage: Stage) -> Option<&PromptTemplate> {
        self.templates.iter().find(|(s, _)| *s == stage).map(|(_, t)| t)
    }

    /// Renders a stage, supplying the few-shot knowledge slots it declares.
    pub fn render(&self, stage: Stage, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let tpl = self.template(stage).ok_or_else(|| TemplateError::MissingPlaceholder {
            template: format!("{}/{}", self.family, stage.file_name()),
            name: "<template not loaded>".into(),
        })?;
        let shot_names: Vec<(String, usize)> = tpl
            .placeholders()
            .iter()
            .filter_map(|p| few_shot_index(p).map(|n| (p.clone(), n)))
            .collect();
        let all = bindings.iter().copied().chain(
            shot_names
                .iter()
                .map(|(name, n)| (name.as_str(), self.few_shot[n - 1].as_str())),
        );
        tpl.render(all)
    }

    /// Hash over every template body and the few-shot knowledge.
    pub fn digest(&self) -> String {
        let mut buf = String::new();
        for (stage, tpl) in &self.templates {
            buf.push_str(stage.file_name());
            buf.push('\0');
            buf.push_str(tpl.body());
            buf.push('\0');
        }
        for k in &self.few_shot {
            buf.push_str(k);
            buf.push('\0');
        }
        sha256_hex(buf)
    }
}

fn few_shot_index(slot: &str) -> Option<usize> {
    slot.strip_prefix("example_knowledge_")?.parse().ok()
}
