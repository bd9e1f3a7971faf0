//! Closed word lists for the synthetic grammars.

pub const NAMES: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "karl",
    "linda", "mike", "nora", "oscar", "peggy", "quinn", "rosa", "sam", "tina", "uma", "victor",
    "wendy", "yuri",
];

/// Property classes compared by the yes/no templates.
pub const PROPERTY_CLASSES: &[(&str, &[&str])] = &[
    ("nationality", &["french", "german", "italian", "spanish", "dutch", "swedish"]),
    ("genre", &["documentary", "romance", "comedy", "horror", "drama", "western"]),
    ("color", &["red", "blue", "green", "yellow", "black", "white"]),
];

pub const CITIES: &[&str] = &["paris", "berlin", "rome", "madrid", "oslo", "lima"];

pub const YEARS: &[&str] = &[
    "1950", "1955", "1960", "1965", "1970", "1975", "1980", "1985", "1990", "1995",
];

/// Attributes asked about by the span templates.
pub const ATTRIBUTES: &[(&str, &[&str])] = &[
    ("job", &["doctor", "lawyer", "teacher", "pilot", "farmer", "singer", "chef", "nurse"]),
    ("pet", &["cat", "dog", "horse", "parrot", "rabbit", "fish", "turtle", "goat"]),
];

pub const RELATIONS: &[&str] = &["married", "hired", "met", "follows"];

pub const FUNCTION_WORDS: &[&str] = &[
    "are", "and", "both", "of", "the", "same", "is", "?", ".", "what", "has", "that", "had", "in",
    "lives", "was", "born", "person",
];

/// Every word of the synthetic grammars, without the special tokens.
pub fn all_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    words.extend(FUNCTION_WORDS);
    words.extend(NAMES);
    for (class, values) in PROPERTY_CLASSES {
        words.push(class);
        words.extend(values.iter());
    }
    words.extend(CITIES);
    words.extend(YEARS);
    for (attr, values) in ATTRIBUTES {
        words.push(attr);
        words.extend(values.iter());
    }
    words.extend(RELATIONS);
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn words_are_unique() {
        let words = all_words();
        let set: HashSet<_> = words.iter().collect();
        assert_eq!(set.len(), words.len());
    }
}
