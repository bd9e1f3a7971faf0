//! Seeded generators for the three synthetic reading-comprehension tasks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lexicon::{ATTRIBUTES, CITIES, NAMES, PROPERTY_CLASSES, RELATIONS, YEARS};
use crate::model::{Answer, ComparisonFacts, ComparisonTemplate, Insertion, Instance, Metadata, Task};

type Sentence = Vec<String>;

fn words(s: &str) -> Sentence {
    s.split_whitespace().map(str::to_owned).collect()
}

fn distinct<'a, R: Rng>(rng: &mut R, pool: &[&'a str], k: usize) -> Vec<&'a str> {
    pool.choose_multiple(rng, k).copied().collect()
}

fn other<'a, R: Rng>(rng: &mut R, pool: &[&'a str], avoid: &[&str]) -> &'a str {
    let candidates: Vec<&str> = pool.iter().copied().filter(|w| !avoid.contains(w)).collect();
    candidates.choose(rng).copied().expect("pool larger than exclusions")
}

fn filler<R: Rng>(rng: &mut R, subject: &str) -> Sentence {
    if rng.random_bool(0.5) {
        words(&format!("{subject} lives in {} .", CITIES.choose(rng).unwrap()))
    } else {
        words(&format!("{subject} was born in {} .", YEARS.choose(rng).unwrap()))
    }
}

/// Concatenates sentences, returning the context and each sentence's start offset.
fn join(sentences: &[Sentence]) -> (Vec<String>, Vec<usize>) {
    let mut ctx = Vec::new();
    let mut starts = Vec::with_capacity(sentences.len());
    for s in sentences {
        starts.push(ctx.len());
        ctx.extend(s.iter().cloned());
    }
    (ctx, starts)
}

fn sentence_boundaries(context: &[String]) -> Vec<usize> {
    let mut out = vec![0];
    for (i, w) in context.iter().enumerate() {
        if w == "." {
            out.push(i + 1);
        }
    }
    out
}

/// One yes/no comparison instance. `yes` fixes the gold answer.
fn comparison_instance<R: Rng>(rng: &mut R, id: String, yes: bool) -> Instance {
    let (class, values) = PROPERTY_CLASSES.choose(rng).copied().unwrap();
    let ents = distinct(rng, NAMES, 2);
    let both = rng.random_bool(0.5);
    let (v1, v2, template) = if both {
        let v = *values.choose(rng).unwrap();
        let (a, b) = if yes {
            (v, v)
        } else {
            let w = other(rng, values, &[v]);
            if rng.random_bool(0.5) {
                (v, w)
            } else {
                (w, v)
            }
        };
        (a, b, ComparisonTemplate::Both { value: v.to_owned() })
    } else {
        let a = *values.choose(rng).unwrap();
        let b = if yes { a } else { other(rng, values, &[a]) };
        (a, b, ComparisonTemplate::Same)
    };

    let question = match &template {
        ComparisonTemplate::Both { value } => words(&format!("are {} and {} both {value} ?", ents[0], ents[1])),
        ComparisonTemplate::Same => words(&format!("are {} and {} of the same {class} ?", ents[0], ents[1])),
    };

    // property sentences are "E is V ." so the value sits at offset 2
    let mut sentences = vec![
        (Some(0), words(&format!("{} is {v1} .", ents[0]))),
        (Some(1), words(&format!("{} is {v2} .", ents[1]))),
    ];
    for _ in 0..rng.random_range(0..=2) {
        let subject = ents[rng.random_range(0..2)];
        sentences.push((None, filler(rng, subject)));
    }
    sentences.shuffle(rng);
    let plain: Vec<Sentence> = sentences.iter().map(|(_, s)| s.clone()).collect();
    let (context, starts) = join(&plain);

    let mut value_pos = [0usize; 2];
    let mut salient = Vec::new();
    for ((tag, _), &start) in sentences.iter().zip(&starts) {
        salient.push(start);
        if let Some(e) = tag {
            value_pos[*e] = start + 2;
            salient.push(start + 2);
        }
    }
    salient.sort_unstable();

    let keywords = match &template {
        ComparisonTemplate::Both { .. } => vec![1, 3, 5],
        ComparisonTemplate::Same => vec![1, 3, 7],
    };
    Instance {
        id,
        question,
        context,
        answer: Answer::YesNo(yes),
        metadata: Metadata {
            task: Some(Task::Comparison),
            properties: vec![value_pos[0], value_pos[1]],
            keywords,
            salient,
            comparison: Some(ComparisonFacts {
                template,
                class: class.to_owned(),
                values: [(value_pos[0], v1.to_owned()), (value_pos[1], v2.to_owned())],
            }),
            ..Metadata::default()
        },
    }
}

/// Yes/no comparison questions ("are A and B both V ?", "are A and B of the same C ?").
///
/// The gold answer alternates yes/no in a seeded shuffled order, so the two
/// classes are exactly balanced up to one instance.
pub fn gen_comparison(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut answers: Vec<bool> = (0..count).map(|i| i % 2 == 0).collect();
    answers.shuffle(&mut rng);
    answers
        .into_iter()
        .enumerate()
        .map(|(i, yes)| comparison_instance(&mut rng, format!("cmp-{seed}-{i}"), yes))
        .collect()
}

/// Label of the comparison shortcut task: a function of the question alone.
pub fn comparison_shortcut_label(instance: &Instance) -> bool {
    let first = &instance.question[1];
    NAMES.iter().position(|n| n == first).is_some_and(|p| p < NAMES.len() / 2)
}

/// Comparison instances relabelled so the answer never depends on the properties.
pub fn gen_comparison_shortcut(seed: u64, count: usize) -> Vec<Instance> {
    gen_comparison(seed, count)
        .into_iter()
        .map(|mut inst| {
            inst.answer = Answer::YesNo(comparison_shortcut_label(&inst));
            inst.id = inst.id.replacen("cmp", "cmp-shortcut", 1);
            inst
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    /// Probability of adding same-attribute sentences about unrelated people.
    pub distractor_rate: f64,
    /// Shortcut variant: the linking sentence never identifies the answer holder.
    pub shortcut: bool,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            distractor_rate: 0.6,
            shortcut: false,
        }
    }
}

fn bridge_instance<R: Rng>(rng: &mut R, id: String, opts: &BridgeOptions) -> Instance {
    let (attr, values) = ATTRIBUTES.choose(rng).copied().unwrap();
    let people = distinct(rng, NAMES, 6);
    let (asked, holder) = (people[0], people[1]);
    let others = &people[2..];
    let relation = *RELATIONS.choose(rng).unwrap();
    let value = *values.choose(rng).unwrap();

    let question = words(&format!("what {attr} has the person that {relation} {asked} ?"));
    let linker = if opts.shortcut { others[0] } else { holder };

    // (is_answer_unit, tokens); the answer sentence directly follows its link.
    let mut link = words(&format!("{linker} {relation} {asked} ."));
    let answer_sentence = words(&format!("{holder} has {attr} {value} ."));
    let mut sentences: Vec<(bool, Sentence)> = if opts.shortcut {
        vec![(false, link), (true, answer_sentence)]
    } else {
        link.extend(answer_sentence);
        vec![(true, link)]
    };
    let answer_offset = if opts.shortcut { 3 } else { 7 };
    let mut used_values = vec![value];
    if !opts.shortcut && rng.random_bool(opts.distractor_rate) {
        let k = rng.random_range(1..=2);
        for &o in &others[1..1 + k] {
            let v = other(rng, values, &used_values);
            used_values.push(v);
            sentences.push((false, words(&format!("{o} has {attr} {v} ."))));
        }
    }
    if sentences.len() < 3 && rng.random_bool(0.5) {
        let subject = [asked, holder][rng.random_range(0..2)];
        sentences.push((false, filler(rng, subject)));
    }
    sentences.shuffle(rng);
    let plain: Vec<Sentence> = sentences.iter().map(|(_, s)| s.clone()).collect();
    let (context, starts) = join(&plain);
    let ans_start = sentences
        .iter()
        .zip(&starts)
        .find(|((is_ans, _), _)| *is_ans)
        .map(|(_, &s)| s + answer_offset)
        .unwrap();

    let mut salient: Vec<usize> = starts.clone();
    salient.push(ans_start - 3);
    salient.push(ans_start);
    salient.sort_unstable();
    salient.dedup();

    let adversarial: Vec<Sentence> = others
        .iter()
        .filter(|o| !context.iter().any(|w| w == *o))
        .take(4)
        .map(|&o| {
            let v = other(rng, values, &[value]);
            words(&format!("{o} has {attr} {v} ."))
        })
        .collect();

    Instance {
        id,
        question,
        context,
        answer: Answer::Span {
            start: ans_start,
            end: ans_start + 1,
        },
        metadata: Metadata {
            task: Some(Task::Bridge),
            primary_question: Some((0, 5)),
            keywords: vec![1, 6, 7],
            salient,
            adversarial,
            ..Metadata::default()
        },
    }
}

/// Two-hop span questions "what ATTR has the person that REL NAME ?".
///
/// The primary question is "what ATTR has the person"; each instance carries
/// a pool of adversarial sentences that answer only the primary question.
pub fn gen_bridge(seed: u64, count: usize) -> Vec<Instance> {
    gen_bridge_with(seed, count, &BridgeOptions::default())
}

pub fn gen_bridge_with(seed: u64, count: usize, opts: &BridgeOptions) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = if opts.shortcut { "bridge-shortcut" } else { "bridge" };
    (0..count)
        .map(|i| bridge_instance(&mut rng, format!("{tag}-{seed}-{i}"), opts))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistractorOptions {
    /// Probability of adding same-attribute facts about other people.
    pub other_fact_rate: f64,
    /// Number of attack sentences attached to each instance.
    pub variants: (usize, usize),
}

impl Default for DistractorOptions {
    fn default() -> Self {
        Self {
            other_fact_rate: 0.5,
            variants: (3, 5),
        }
    }
}

fn distractor_instance<R: Rng>(rng: &mut R, id: String, opts: &DistractorOptions) -> Instance {
    let (attr, values) = ATTRIBUTES.choose(rng).copied().unwrap();
    let people = distinct(rng, NAMES, 7);
    let subject = people[0];
    let year = *YEARS.choose(rng).unwrap();
    let value = *values.choose(rng).unwrap();
    let question = words(&format!("what {attr} had {subject} in {year} ?"));

    let gold_sentence = words(&format!("{subject} had {attr} {value} in {year} ."));
    let mut sentences: Vec<(bool, Sentence)> = vec![(true, gold_sentence.clone())];
    let mut used = vec![value];
    if rng.random_bool(opts.other_fact_rate) {
        let o = people[1];
        let v = other(rng, values, &used);
        used.push(v);
        let y = other(rng, YEARS, &[year]);
        sentences.push((false, words(&format!("{o} had {attr} {v} in {y} ."))));
    }
    for _ in 0..rng.random_range(1..=2) {
        let who = people[rng.random_range(0..3)];
        sentences.push((false, filler(rng, who)));
    }
    sentences.shuffle(rng);
    let plain: Vec<Sentence> = sentences.iter().map(|(_, s)| s.clone()).collect();
    let (context, starts) = join(&plain);
    let gold_start = sentences
        .iter()
        .zip(&starts)
        .find(|((g, _), _)| *g)
        .map(|(_, &s)| s)
        .unwrap();
    let ans = gold_start + 3;

    let boundaries = sentence_boundaries(&context);
    let n_variants = rng.random_range(opts.variants.0..=opts.variants.1);
    let decoys = &people[2..];
    let mut distractors = Vec::with_capacity(n_variants);
    for k in 0..n_variants {
        let v = other(rng, values, &[value]);
        let sentence = match k % 3 {
            0 => words(&format!("{} had {attr} {v} in {year} .", decoys[k % decoys.len()])),
            1 => words(&format!("{subject} had {attr} {v} in {} .", other(rng, YEARS, &[year]))),
            _ => words(&format!(
                "{} had {attr} {v} in {} .",
                decoys[(k + 1) % decoys.len()],
                other(rng, YEARS, &[year])
            )),
        };
        let at = *boundaries.choose(rng).unwrap();
        distractors.push(Insertion { tokens: sentence, at });
    }

    let mut salient = vec![gold_start, ans, gold_start + 5];
    salient.sort_unstable();
    Instance {
        id,
        question,
        context,
        answer: Answer::Span {
            start: ans,
            end: ans + 1,
        },
        metadata: Metadata {
            task: Some(Task::Distractor),
            keywords: vec![3, 5],
            salient,
            distractors,
            ..Metadata::default()
        },
    }
}

/// Single-hop span questions "what ATTR had NAME in YEAR ?" with 3–5 attack sentences each.
///
/// Every attack reuses the question pattern with a decoy entity and/or year
/// and a different value, inserted at a sentence boundary.
pub fn gen_distractor(seed: u64, count: usize) -> Vec<Instance> {
    gen_distractor_with(seed, count, &DistractorOptions::default())
}

pub fn gen_distractor_with(seed: u64, count: usize, opts: &DistractorOptions) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| distractor_instance(&mut rng, format!("sq-{seed}-{i}"), opts))
        .collect()
}

/// Distractor-task training data: bases plus, with `attack_rate`, one random attack applied.
pub fn gen_distractor_training(seed: u64, count: usize, attack_rate: f64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    gen_distractor(seed, count)
        .into_iter()
        .map(|inst| {
            if rng.random_bool(attack_rate) {
                let ins = inst.metadata.distractors.choose(&mut rng).unwrap().clone();
                let id = format!("{}-att", inst.id);
                inst.with_insertion(&ins, id)
            } else {
                inst
            }
        })
        .collect()
}

/// True when `needle` occurs contiguously in `haystack`.
pub fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vocabulary;

    #[test]
    fn comparison_is_deterministic_and_balanced() {
        let a = gen_comparison(0, 2000);
        assert_eq!(a, gen_comparison(0, 2000));
        let yes = a.iter().filter(|i| i.answer == Answer::YesNo(true)).count();
        let no = a.len() - yes;
        assert!(yes.abs_diff(no) <= 200, "{yes} vs {no}");
    }

    #[test]
    fn both_answers_follow_the_values() {
        for inst in gen_comparison(3, 500) {
            let facts = inst.metadata.comparison.as_ref().unwrap();
            let [(p1, v1), (p2, v2)] = &facts.values;
            assert_eq!(&inst.context[*p1], v1);
            assert_eq!(&inst.context[*p2], v2);
            let want = match &facts.template {
                ComparisonTemplate::Both { value } => v1 == value && v2 == value,
                ComparisonTemplate::Same => v1 == v2,
            };
            assert_eq!(inst.answer, Answer::YesNo(want));
            let sentences = inst.context.iter().filter(|w| *w == ".").count();
            assert!((2..=4).contains(&sentences));
        }
    }

    #[test]
    fn every_generated_word_is_in_the_vocabulary() {
        let v = Vocabulary::synthetic();
        let mut all = gen_comparison(1, 200);
        all.extend(gen_bridge(1, 200));
        all.extend(gen_distractor(1, 200));
        for inst in &all {
            assert!(v.encode(inst, 64).is_ok(), "{inst:?}");
            for s in &inst.metadata.adversarial {
                assert!(s.iter().all(|w| v.id(w).is_some()));
            }
        }
    }

    #[test]
    fn bridge_adversarial_sentences_avoid_the_gold_answer() {
        let data = gen_bridge(0, 300);
        assert_eq!(data, gen_bridge(0, 300));
        for inst in &data {
            let gold = inst.span_text(&inst.answer).unwrap().to_vec();
            assert!(inst.metadata.adversarial.len() >= 2);
            for adv in &inst.metadata.adversarial {
                assert!(!contains_run(adv, &gold));
            }
            let (s, e) = inst.metadata.primary_question.unwrap();
            assert_eq!(inst.question[s..e][0], "what");
        }
    }

    #[test]
    fn distractors_keep_the_gold_answer_extractable() {
        let data = gen_distractor(0, 300);
        assert_eq!(data, gen_distractor(0, 300));
        for inst in &data {
            let gold = inst.span_text(&inst.answer).unwrap().to_vec();
            let start = match inst.answer {
                Answer::Span { start, .. } => start - 3,
                _ => unreachable!(),
            };
            let gold_sentence = inst.context[start..start + 7].to_vec();
            assert!((3..=5).contains(&inst.metadata.distractors.len()));
            for (k, ins) in inst.metadata.distractors.iter().enumerate() {
                let attacked = inst.with_insertion(ins, format!("v{k}"));
                let new_gold = attacked.span_text(&attacked.answer).unwrap();
                assert_eq!(new_gold, gold.as_slice());
                assert!(contains_run(&attacked.context, &gold_sentence));
                assert_ne!(ins.tokens[3], gold[0], "distractor answer equals gold");
            }
        }
    }
}
