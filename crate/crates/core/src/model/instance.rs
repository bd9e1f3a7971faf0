use serde::{Deserialize, Serialize};

/// Gold or predicted answer. Span offsets index the context, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    YesNo(bool),
    Span { start: usize, end: usize },
}

impl Answer {
    pub fn head(&self) -> Head {
        match self {
            Answer::YesNo(_) => Head::YesNo,
            Answer::Span { .. } => Head::Span,
        }
    }
}

/// Which QA head reads the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    YesNo,
    Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Comparison,
    Bridge,
    Distractor,
}

/// A sentence to insert into the context at a token offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertion {
    pub tokens: Vec<String>,
    pub at: usize,
}

/// What the yes/no comparison generator knows about an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonFacts {
    pub template: ComparisonTemplate,
    pub class: String,
    /// Property value (context offset, word) for each of the two entities, in question order.
    pub values: [(usize, String); 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonTemplate {
    /// "are A and B both V ?" with the queried value.
    Both { value: String },
    /// "are A and B of the same CLASS ?"
    Same,
}

/// Generator annotations. Question positions index `question`, the rest index `context`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub task: Option<Task>,
    /// Context offsets of the property tokens.
    #[serde(default)]
    pub properties: Vec<usize>,
    /// Question span of the primary (wh-bearing) part, end exclusive.
    #[serde(default)]
    pub primary_question: Option<(usize, usize)>,
    /// Question offsets of the essential keywords (entities and numbers).
    #[serde(default)]
    pub keywords: Vec<usize>,
    /// Context offsets of tokens worth pairing with the question for occlusion.
    #[serde(default)]
    pub salient: Vec<usize>,
    #[serde(default)]
    pub comparison: Option<ComparisonFacts>,
    /// Candidate adversarial sentences answering only the primary question.
    #[serde(default)]
    pub adversarial: Vec<Vec<String>>,
    /// Distractor sentences and where each one goes.
    #[serde(default)]
    pub distractors: Vec<Insertion>,
}

/// One reading-comprehension example: question, context and answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub question: Vec<String>,
    pub context: Vec<String>,
    pub answer: Answer,
    #[serde(default)]
    pub metadata: Metadata,
}

impl Instance {
    pub fn new(id: impl Into<String>, question: &str, context: &str, answer: Answer) -> Self {
        Self {
            id: id.into(),
            question: question.split_whitespace().map(str::to_owned).collect(),
            context: context.split_whitespace().map(str::to_owned).collect(),
            answer,
            metadata: Metadata::default(),
        }
    }

    pub fn head(&self) -> Head {
        self.answer.head()
    }

    /// Context words covered by a span answer.
    pub fn span_text(&self, answer: &Answer) -> Option<&[String]> {
        match *answer {
            Answer::Span { start, end } if start < end && end <= self.context.len() => {
                Some(&self.context[start..end])
            }
            _ => None,
        }
    }

    /// Copy with `tokens` inserted into the context at offset `at`.
    ///
    /// Context-relative annotations after the insertion point are shifted;
    /// the gold span is shifted too.
    pub fn with_insertion(&self, ins: &Insertion, id: impl Into<String>) -> Self {
        let k = ins.tokens.len();
        let shift = |p: usize| if p >= ins.at { p + k } else { p };
        let mut out = self.clone();
        out.id = id.into();
        out.context.splice(ins.at..ins.at, ins.tokens.iter().cloned());
        out.answer = match self.answer {
            Answer::Span { start, end } if start >= ins.at => Answer::Span {
                start: start + k,
                end: end + k,
            },
            a => a,
        };
        let m = &mut out.metadata;
        m.properties = m.properties.iter().map(|&p| shift(p)).collect();
        m.salient = m.salient.iter().map(|&p| shift(p)).collect();
        if let Some(c) = &mut m.comparison {
            for v in &mut c.values {
                v.0 = shift(v.0);
            }
        }
        m.distractors.clear();
        m.adversarial.clear();
        out
    }
}
