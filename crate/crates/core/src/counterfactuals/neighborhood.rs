use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::PROPERTY_CLASSES;
use super::CounterfactualError;
use crate::model::{Answer, ComparisonTemplate, Insertion, Instance, MicroTransformer, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    YesNo,
    Bridge,
    Distractor,
}

impl Setting {
    /// The hypothesis about the model that `z = 1` affirms.
    pub fn hypothesis(self) -> &'static str {
        match self {
            Setting::YesNo => "the model compares the entities' properties as indicated by the question",
            Setting::Bridge => "the model reasons over both hops rather than a shortcut driven by the primary question",
            Setting::Distractor => "the model resists adversarial distractor sentences",
        }
    }

    pub fn label_rule(self) -> &'static str {
        match self {
            Setting::YesNo => "z=1 iff the prediction changes on some perturbation",
            Setting::Bridge | Setting::Distractor => "z=1 iff the prediction never changes",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::YesNo => "yes-no",
            Setting::Bridge => "bridge",
            Setting::Distractor => "distractor",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes-no" => Ok(Setting::YesNo),
            "bridge" => Ok(Setting::Bridge),
            "distractor" => Ok(Setting::Distractor),
            other => Err(format!("unknown setting {other:?}")),
        }
    }
}

/// What a model answered, compared by exact string for spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerText {
    YesNo(bool),
    Span(Vec<String>),
}

impl AnswerText {
    pub fn of(instance: &Instance, answer: &Answer) -> Self {
        match answer {
            Answer::YesNo(b) => AnswerText::YesNo(*b),
            span => AnswerText::Span(instance.span_text(span).map(<[String]>::to_vec).unwrap_or_default()),
        }
    }
}

/// A base instance, its perturbations, and the behavioral label once computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub id: String,
    pub base: Instance,
    pub perturbations: Vec<Instance>,
    pub setting: Setting,
    pub z: Option<u8>,
    /// Model answers on base then each perturbation, kept for audit.
    #[serde(default)]
    pub predictions: Vec<AnswerText>,
    /// Probability of the model's answer on the base example.
    #[serde(default)]
    pub base_confidence: Option<f64>,
    /// Target tokens P as positions of the base encoding.
    pub target_tokens: Vec<usize>,
    /// All question positions Q of the base encoding.
    pub question_tokens: Vec<usize>,
    /// Essential keyword positions of the base encoding.
    pub keywords: Vec<usize>,
}

impl Neighborhood {
    pub fn size(&self) -> usize {
        1 + self.perturbations.len()
    }

    pub fn members(&self) -> impl Iterator<Item = &Instance> {
        std::iter::once(&self.base).chain(&self.perturbations)
    }
}

fn question_pos(i: usize) -> usize {
    1 + i
}

fn context_pos(instance: &Instance, i: usize) -> usize {
    instance.question.len() + 2 + i
}

fn comparison_answer(template: &ComparisonTemplate, a: &str, b: &str) -> bool {
    match template {
        ComparisonTemplate::Both { value } => a == value && b == value,
        ComparisonTemplate::Same => a == b,
    }
}

fn missing(what: &str, instance: &Instance) -> CounterfactualError {
    CounterfactualError::MissingMetadata {
        instance: instance.id.clone(),
        what: what.to_owned(),
    }
}

fn yes_no_neighborhood(
    instance: &Instance,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Instance>, CounterfactualError> {
    let facts = instance
        .metadata
        .comparison
        .as_ref()
        .ok_or_else(|| missing("comparison facts", instance))?;
    let [(p1, v1), (p2, v2)] = &facts.values;
    if instance.context.get(*p1) != Some(v1) || instance.context.get(*p2) != Some(v2) {
        return Err(missing("property positions consistent with the context", instance));
    }
    let (s1, s2) = if v1 != v2 {
        (v1.clone(), v2.clone())
    } else {
        let class_values = PROPERTY_CLASSES
            .iter()
            .find(|(c, _)| *c == facts.class)
            .map(|(_, v)| *v)
            .ok_or_else(|| missing("known property class", instance))?;
        let alt = match &facts.template {
            ComparisonTemplate::Both { value } if value != v1 => value.clone(),
            _ => {
                let pool: Vec<&str> = class_values.iter().copied().filter(|w| w != v1).collect();
                (*pool.choose(rng).expect("class has alternatives")).to_owned()
            }
        };
        (v1.clone(), alt)
    };
    let combos = [(&s1, &s1), (&s1, &s2), (&s2, &s1), (&s2, &s2)];
    let golds: Vec<bool> = combos
        .iter()
        .map(|(a, b)| comparison_answer(&facts.template, a, b))
        .collect();
    if golds.iter().all(|&g| g == golds[0]) {
        return Err(CounterfactualError::IdenticalGroundTruth(instance.id.clone()));
    }
    let mut perturbations = Vec::with_capacity(3);
    for (k, (a, b)) in combos.iter().enumerate() {
        if *a == v1 && *b == v2 {
            continue;
        }
        let mut p = instance.clone();
        p.id = format!("{}-cf{k}", instance.id);
        p.context[*p1] = (*a).clone();
        p.context[*p2] = (*b).clone();
        p.answer = Answer::YesNo(golds[k]);
        if let Some(f) = &mut p.metadata.comparison {
            f.values[0].1 = (*a).clone();
            f.values[1].1 = (*b).clone();
        }
        perturbations.push(p);
    }
    debug_assert_eq!(perturbations.len(), 3);
    Ok(perturbations)
}

/// Forms the counterfactual neighborhood of `instance` for `setting`.
///
/// * yes-no: the two property tokens take every combination of two
///   substitutes (base plus three perturbations, gold answers not all equal);
/// * bridge: two adversarial sentences from the pool, one prepended and one
///   appended to the context;
/// * distractor: every attached attack, at least three required.
pub fn build_neighborhood(
    instance: &Instance,
    setting: Setting,
    seed: u64,
) -> Result<Neighborhood, CounterfactualError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = &instance.metadata;
    let question_tokens: Vec<usize> = (0..instance.question.len()).map(question_pos).collect();
    let keywords: Vec<usize> = meta.keywords.iter().map(|&k| question_pos(k)).collect();

    let (perturbations, target_tokens) = match setting {
        Setting::YesNo => {
            let p = yes_no_neighborhood(instance, &mut rng)?;
            let targets = meta.properties.iter().map(|&i| context_pos(instance, i)).collect();
            (p, targets)
        }
        Setting::Bridge => {
            let (s, e) = meta
                .primary_question
                .ok_or_else(|| missing("primary question span", instance))?;
            if meta.adversarial.len() < 2 {
                return Err(missing("two adversarial sentences", instance));
            }
            let picked: Vec<&Vec<String>> = meta.adversarial.choose_multiple(&mut rng, 2).collect();
            let front = Insertion {
                tokens: picked[0].clone(),
                at: 0,
            };
            let back = Insertion {
                tokens: picked[1].clone(),
                at: instance.context.len(),
            };
            let p = vec![
                instance.with_insertion(&front, format!("{}-adv1", instance.id)),
                instance.with_insertion(&back, format!("{}-adv2", instance.id)),
            ];
            (p, (s..e).map(question_pos).collect())
        }
        Setting::Distractor => {
            if meta.distractors.len() < 3 {
                return Err(CounterfactualError::TooFewAttacks {
                    instance: instance.id.clone(),
                    found: meta.distractors.len(),
                });
            }
            let p = meta
                .distractors
                .iter()
                .enumerate()
                .map(|(k, ins)| instance.with_insertion(ins, format!("{}-att{k}", instance.id)))
                .collect();
            (p, keywords.clone())
        }
    };

    let encoded_len = instance.question.len() + instance.context.len() + 3;
    if let Some(&bad) = target_tokens
        .iter()
        .chain(&keywords)
        .find(|&&p| p >= encoded_len)
    {
        return Err(missing(&format!("annotation position {bad} inside the encoding"), instance));
    }

    Ok(Neighborhood {
        id: format!("nb-{}", instance.id),
        base: instance.clone(),
        perturbations,
        setting,
        z: None,
        predictions: Vec::new(),
        base_confidence: None,
        target_tokens,
        question_tokens,
        keywords,
    })
}

/// Applies the setting's label rule to the base answer followed by perturbation answers.
pub fn label_from_answers(setting: Setting, answers: &[AnswerText]) -> u8 {
    let changed = answers.iter().skip(1).any(|a| *a != answers[0]);
    match setting {
        Setting::YesNo => u8::from(changed),
        Setting::Bridge | Setting::Distractor => u8::from(!changed),
    }
}

/// Runs `model` over the neighborhood, records its answers and sets `z`.
pub fn label_neighborhood(model: &MicroTransformer, nb: &mut Neighborhood) -> Result<u8, ModelError> {
    let mut answers = Vec::with_capacity(nb.size());
    let mut confidence = None;
    for inst in nb.members() {
        let pred = model.predict(inst)?;
        confidence.get_or_insert(pred.confidence);
        answers.push(AnswerText::of(inst, &pred.answer));
    }
    nb.base_confidence = confidence;
    let z = label_from_answers(nb.setting, &answers);
    nb.predictions = answers;
    nb.z = Some(z);
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactuals::{gen_bridge, gen_comparison, gen_distractor};
    use crate::model::{ComparisonFacts, Metadata, Task};

    fn yes_no_base(v1: &str, v2: &str, template: ComparisonTemplate) -> Instance {
        let q = match &template {
            ComparisonTemplate::Both { value } => format!("are alice and bob both {value} ?"),
            ComparisonTemplate::Same => "are alice and bob of the same genre ?".to_owned(),
        };
        let mut inst = Instance::new(
            "ex",
            &q,
            &format!("alice is {v1} . bob is {v2} ."),
            Answer::YesNo(comparison_answer(&template, v1, v2)),
        );
        inst.metadata = Metadata {
            task: Some(Task::Comparison),
            properties: vec![2, 6],
            keywords: vec![1, 3],
            comparison: Some(ComparisonFacts {
                template,
                class: "genre".into(),
                values: [(2, v1.into()), (6, v2.into())],
            }),
            ..Metadata::default()
        };
        inst
    }

    fn values(inst: &Instance) -> (String, String) {
        (inst.context[2].clone(), inst.context[6].clone())
    }

    #[test]
    fn equal_properties_pull_in_an_alternative() {
        let base = yes_no_base("documentary", "documentary", ComparisonTemplate::Same);
        let nb = build_neighborhood(&base, Setting::YesNo, 0).unwrap();
        assert_eq!(nb.size(), 4);
        let mut vals: Vec<(String, String)> = nb.members().map(values).collect();
        vals.sort();
        let alt = vals.iter().find(|(a, _)| a != "documentary").unwrap().0.clone();
        let d = "documentary".to_owned();
        let mut want = vec![
            (d.clone(), d.clone()),
            (d.clone(), alt.clone()),
            (alt.clone(), d.clone()),
            (alt.clone(), alt.clone()),
        ];
        want.sort();
        assert_eq!(vals, want);
        // encoded positions of the two property tokens: CLS + 9 question words + SEP = 11
        assert_eq!(nb.target_tokens, vec![11 + 2, 11 + 6]);
    }

    #[test]
    fn documentary_romance_neighborhood() {
        let base = yes_no_base("documentary", "documentary", ComparisonTemplate::Both {
            value: "documentary".into(),
        });
        let nb = build_neighborhood(&base, Setting::YesNo, 0).unwrap();
        let vals: Vec<(String, String)> = nb.members().map(values).collect();
        assert_eq!(vals[0], ("documentary".into(), "documentary".into()));
        assert!(vals.iter().any(|(a, b)| a != "documentary" && b != "documentary"));
        let golds: Vec<Answer> = nb.members().map(|i| i.answer).collect();
        assert_eq!(golds.iter().filter(|a| **a == Answer::YesNo(true)).count(), 1);
    }

    #[test]
    fn generated_yes_no_neighborhoods_have_both_gold_answers() {
        for inst in gen_comparison(4, 200) {
            let nb = build_neighborhood(&inst, Setting::YesNo, 1).unwrap();
            assert_eq!(nb.size(), 4);
            let yes = nb.members().filter(|i| i.answer == Answer::YesNo(true)).count();
            assert!(yes > 0 && yes < 4);
            for m in nb.perturbations.iter() {
                let diff: Vec<usize> = (0..m.context.len()).filter(|&i| m.context[i] != inst.context[i]).collect();
                assert!(diff.iter().all(|i| inst.metadata.properties.contains(i)));
            }
        }
    }

    #[test]
    fn bridge_neighborhood_has_three_members() {
        let inst = &gen_bridge(0, 1)[0];
        let nb = build_neighborhood(inst, Setting::Bridge, 0).unwrap();
        assert_eq!(nb.size(), 3);
        for p in &nb.perturbations {
            assert_eq!(p.span_text(&p.answer), inst.span_text(&inst.answer));
        }
        assert_eq!(nb.target_tokens, vec![1, 2, 3, 4, 5]);
        assert_eq!(nb.question_tokens.len(), inst.question.len());
    }

    #[test]
    fn distractor_needs_three_attacks() {
        let mut inst = gen_distractor(0, 1).remove(0);
        let nb = build_neighborhood(&inst, Setting::Distractor, 0).unwrap();
        assert_eq!(nb.size(), 1 + inst.metadata.distractors.len());
        inst.metadata.distractors.truncate(2);
        assert_eq!(
            build_neighborhood(&inst, Setting::Distractor, 0).unwrap_err(),
            CounterfactualError::TooFewAttacks {
                instance: inst.id.clone(),
                found: 2
            }
        );
    }

    #[test]
    fn missing_metadata_is_an_error() {
        let inst = Instance::new("bare", "are alice and bob both red ?", "alice is red .", Answer::YesNo(false));
        assert!(matches!(
            build_neighborhood(&inst, Setting::YesNo, 0),
            Err(CounterfactualError::MissingMetadata { .. })
        ));
        assert!(matches!(
            build_neighborhood(&inst, Setting::Bridge, 0),
            Err(CounterfactualError::MissingMetadata { .. })
        ));
    }

    #[test]
    fn label_rules_per_setting() {
        let yes = AnswerText::YesNo(true);
        assert_eq!(label_from_answers(Setting::YesNo, &[yes.clone(), yes.clone(), yes.clone(), yes]), 0);
        let a = AnswerText::Span(vec!["doctor".into()]);
        let b = AnswerText::Span(vec!["lawyer".into()]);
        assert_eq!(label_from_answers(Setting::Bridge, &[a.clone(), b.clone(), a.clone()]), 0);
        assert_eq!(label_from_answers(Setting::Distractor, &[a.clone(), a.clone(), a.clone(), a]), 1);
        assert_eq!(label_from_answers(Setting::YesNo, &[AnswerText::YesNo(true), AnswerText::YesNo(false)]), 1);
        let _ = b;
    }
}
