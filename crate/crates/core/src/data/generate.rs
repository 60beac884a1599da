//! Fact-lookup task generator and its scripted oracles.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokens::TokenId;

use super::{Dataset, TaskInstance, Vocabulary};

/// Task family: four-way attribute lookup, or yes/no attribute checks with a
/// shared candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    MultiChoice,
    YesNo,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::MultiChoice => "multi-choice",
            TaskKind::YesNo => "yes-no",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multi-choice" => Ok(TaskKind::MultiChoice),
            "yes-no" => Ok(TaskKind::YesNo),
            other => Err(Error::Parse(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Generation parameters.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Number of subjects in the hidden fact table.
    pub n_facts: usize,
    pub n_choices: usize,
    pub task_kind: TaskKind,
    /// Fraction of subjects whose attribute varies per instance, resolvable
    /// only through the rationale.
    pub ambiguous_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 500,
            n_test: 500,
            n_facts: 96,
            n_choices: 4,
            task_kind: TaskKind::MultiChoice,
            ambiguous_fraction: 0.3,
        }
    }
}

const ATTRIBUTES: [&str; 12] = [
    "red", "blue", "green", "amber", "violet", "teal", "coral", "ivory", "onyx", "pearl", "slate",
    "gold",
];

const PHRASE_WORDS: [&str; 42] = [
    "which", "what", "shade", "tone", "hue", "tint", "does", "carry", "hold", "show", "wear",
    "name", "the", "of", "tell", "me", "say", "has", "report", "that", "bears", "please", "now",
    "kindly", "because", "since", "as", "holds", "keeps", "shows", "indeed", "is", "truly",
    "would", "yes", "no", "and", "while", "plus", "also", "record", "says",
];

/// Question templates; `None` marks the subject slot.
const MC_TEMPLATES: [&[Option<&str>]; 12] = [
    &[
        Some("which"),
        Some("shade"),
        Some("does"),
        None,
        Some("carry"),
    ],
    &[
        Some("which"),
        Some("tone"),
        Some("does"),
        None,
        Some("hold"),
    ],
    &[Some("what"), Some("hue"), Some("does"), None, Some("show")],
    &[Some("what"), Some("tint"), Some("does"), None, Some("wear")],
    &[Some("name"), Some("the"), Some("shade"), Some("of"), None],
    &[Some("name"), Some("the"), Some("hue"), Some("of"), None],
    &[
        Some("tell"),
        Some("me"),
        Some("the"),
        Some("tone"),
        Some("of"),
        None,
    ],
    &[
        Some("tell"),
        Some("me"),
        Some("the"),
        Some("tint"),
        Some("of"),
        None,
    ],
    &[Some("say"), Some("which"), Some("shade"), None, Some("has")],
    &[Some("say"), Some("which"), Some("hue"), None, Some("has")],
    &[
        Some("report"),
        Some("the"),
        Some("tone"),
        Some("that"),
        None,
        Some("bears"),
    ],
    &[
        Some("report"),
        Some("the"),
        Some("shade"),
        Some("that"),
        None,
        Some("bears"),
    ],
];

/// Yes/no templates; the second slot (`None` after the subject) takes the
/// asked attribute.
const YN_TEMPLATES: [&[Option<&str>]; 4] = [
    &[Some("does"), None, Some("hold"), None],
    &[Some("is"), None, Some("truly"), None],
    &[Some("would"), None, Some("show"), None],
    &[Some("does"), None, Some("wear"), None],
];

const LEADS: [&[&str]; 4] = [&[], &["please"], &["now"], &["kindly"]];

/// A rationale is two clauses: the fact about the question's subject plus a
/// decoy fact about some other subject, in random order. The reader has to
/// bind the right subject, not just spot an attribute word.
const FTR_LEAD_CONNS: [&str; 3] = ["because", "since", "as"];
const FTR_JOIN_CONNS: [&str; 3] = ["and", "while", "plus"];
const FTR_VERBS: [&str; 3] = ["holds", "keeps", "shows"];

const SUBJECT_CONSONANTS: [char; 14] = [
    'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z',
];
const SUBJECT_VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

fn subject_names(n: usize) -> Result<Vec<String>> {
    let taken: HashSet<&str> = PHRASE_WORDS
        .iter()
        .chain(ATTRIBUTES.iter())
        .copied()
        .collect();
    let mut names = Vec::with_capacity(n);
    let mut i = 0usize;
    while names.len() < n {
        let s1 = i % 70;
        let s2 = i / 70;
        if s2 >= 70 {
            return Err(Error::Generation(format!("cannot name {n} subjects")));
        }
        let name: String = [
            SUBJECT_CONSONANTS[s1 % 14],
            SUBJECT_VOWELS[s1 / 14],
            SUBJECT_CONSONANTS[s2 % 14],
            SUBJECT_VOWELS[s2 / 14],
        ]
        .into_iter()
        .collect();
        if !taken.contains(name.as_str()) {
            names.push(name);
        }
        i += 1;
    }
    Ok(names)
}

/// A generated dataset plus the generator-side knowledge the scripted
/// oracles need.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub subject_ids: Vec<TokenId>,
    pub attribute_ids: Vec<TokenId>,
}

struct FactTable {
    /// Per subject: primary attribute index, plus an alternative for
    /// ambiguous subjects.
    primary: Vec<usize>,
    alternative: Vec<Option<usize>>,
}

/// A phrasing is a lead-in plus a template, identified per split.
#[derive(Clone, Copy)]
struct Phrasing {
    template: usize,
    lead: usize,
}

fn split_phrasings(n_templates: usize, rng: &mut ChaCha8Rng) -> [Vec<Phrasing>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for t in 0..n_templates {
        let mut leads: Vec<usize> = (0..LEADS.len()).collect();
        leads.shuffle(rng);
        // Two lead variants to train, one to dev, one to test: splits stay
        // disjoint in full surface phrasing while every template occurs
        // everywhere.
        out[0].push(Phrasing {
            template: t,
            lead: leads[0],
        });
        out[0].push(Phrasing {
            template: t,
            lead: leads[1],
        });
        out[1].push(Phrasing {
            template: t,
            lead: leads[2],
        });
        out[2].push(Phrasing {
            template: t,
            lead: leads[3],
        });
    }
    out
}

pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Generated> {
    if spec.n_choices < 2 {
        return Err(Error::Generation("need at least 2 choices".into()));
    }
    if spec.n_facts < spec.n_choices {
        return Err(Error::Generation(format!(
            "n_facts {} must be at least n_choices {}",
            spec.n_facts, spec.n_choices
        )));
    }
    if spec.n_choices > ATTRIBUTES.len() {
        return Err(Error::Generation(format!(
            "n_choices {} exceeds the {} available attributes",
            spec.n_choices,
            ATTRIBUTES.len()
        )));
    }
    if !(0.0..=1.0).contains(&spec.ambiguous_fraction) {
        return Err(Error::Generation(
            "ambiguous_fraction must lie in [0, 1]".into(),
        ));
    }
    if spec.n_train == 0 || spec.n_dev == 0 || spec.n_test == 0 {
        return Err(Error::Generation("every split must be non-empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = subject_names(spec.n_facts)?;

    let mut words: Vec<String> = PHRASE_WORDS.iter().map(|s| s.to_string()).collect();
    words.extend(ATTRIBUTES.iter().map(|s| s.to_string()));
    words.extend(subjects.iter().cloned());
    let vocab = Vocabulary::new(&words)?;

    let subject_ids: Vec<TokenId> = subjects
        .iter()
        .map(|s| vocab.id(s).expect("subject in vocab"))
        .collect();
    let attribute_ids: Vec<TokenId> = ATTRIBUTES
        .iter()
        .map(|a| vocab.id(a).expect("attribute in vocab"))
        .collect();

    // Hidden fact table.
    let n_attrs = ATTRIBUTES.len();
    let primary: Vec<usize> = (0..spec.n_facts)
        .map(|_| rng.random_range(0..n_attrs))
        .collect();
    let n_ambiguous = (spec.ambiguous_fraction * spec.n_facts as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.n_facts).collect();
    order.shuffle(&mut rng);
    let mut ambiguous: Vec<usize> = order[..n_ambiguous].to_vec();
    ambiguous.sort_unstable();
    let mut alternative = vec![None; spec.n_facts];
    for &s in &ambiguous {
        let mut alt = rng.random_range(0..n_attrs - 1);
        if alt >= primary[s] {
            alt += 1;
        }
        alternative[s] = Some(alt);
    }
    let facts = FactTable {
        primary,
        alternative,
    };

    let n_templates = match spec.task_kind {
        TaskKind::MultiChoice => MC_TEMPLATES.len(),
        TaskKind::YesNo => YN_TEMPLATES.len(),
    };
    let phrasings = split_phrasings(n_templates, &mut rng);

    let sizes = [spec.n_train, spec.n_dev, spec.n_test];
    let mut splits: Vec<Vec<TaskInstance>> = Vec::with_capacity(3);
    for (pool, &size) in phrasings.iter().zip(&sizes) {
        let mut instances = Vec::with_capacity(size);
        for _ in 0..size {
            instances.push(generate_instance(
                spec,
                &facts,
                pool,
                &vocab,
                &subject_ids,
                &attribute_ids,
                &mut rng,
            )?);
        }
        splits.push(instances);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");

    Ok(Generated {
        dataset: Dataset {
            vocab,
            train,
            dev,
            test,
        },
        subject_ids,
        attribute_ids,
    })
}

fn fill_template(
    template: &[Option<&str>],
    lead: &[&str],
    vocab: &Vocabulary,
    slots: &[TokenId],
) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = lead
        .iter()
        .map(|w| vocab.id(w).expect("lead word"))
        .collect();
    let mut slot = 0;
    for piece in template {
        match piece {
            Some(w) => out.push(vocab.id(w).expect("template word")),
            None => {
                out.push(slots[slot]);
                slot += 1;
            }
        }
    }
    debug_assert_eq!(slot, slots.len());
    out
}

/// Pick a decoy subject whose primary attribute differs from `realized`.
fn pick_decoy(
    facts: &FactTable,
    subject: usize,
    realized: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let n = facts.primary.len();
    for _ in 0..64 {
        let cand = rng.random_range(0..n);
        if cand != subject && facts.primary[cand] != realized {
            return Ok(cand);
        }
    }
    (0..n)
        .find(|&s| s != subject && facts.primary[s] != realized)
        .ok_or_else(|| Error::Generation("no decoy subject available".into()))
}

fn generate_instance(
    spec: &DatasetSpec,
    facts: &FactTable,
    phrasings: &[Phrasing],
    vocab: &Vocabulary,
    subject_ids: &[TokenId],
    attribute_ids: &[TokenId],
    rng: &mut ChaCha8Rng,
) -> Result<TaskInstance> {
    let n_attrs = attribute_ids.len();
    let subject = rng.random_range(0..subject_ids.len());
    let realized = match facts.alternative[subject] {
        Some(alt) if rng.random_bool(0.5) => alt,
        _ => facts.primary[subject],
    };
    let phrasing = phrasings[rng.random_range(0..phrasings.len())];

    // Two-clause rationale: the relevant fact and a decoy fact.
    let decoy = pick_decoy(facts, subject, realized, rng)?;
    let decoy_attr = facts.primary[decoy];
    let lead = FTR_LEAD_CONNS[rng.random_range(0..FTR_LEAD_CONNS.len())];
    let join = FTR_JOIN_CONNS[rng.random_range(0..FTR_JOIN_CONNS.len())];
    let verb_true = FTR_VERBS[rng.random_range(0..FTR_VERBS.len())];
    let verb_decoy = FTR_VERBS[rng.random_range(0..FTR_VERBS.len())];
    let true_first = rng.random_bool(0.5);
    let word = |w: &str| vocab.id(w).expect("rationale word");
    let true_clause = [
        subject_ids[subject],
        word(verb_true),
        attribute_ids[realized],
    ];
    let decoy_clause = [
        subject_ids[decoy],
        word(verb_decoy),
        attribute_ids[decoy_attr],
    ];
    let mut ftr = vec![word(lead)];
    let (first, second) = if true_first {
        (true_clause, decoy_clause)
    } else {
        (decoy_clause, true_clause)
    };
    ftr.extend_from_slice(&first);
    ftr.push(word(join));
    ftr.extend_from_slice(&second);

    match spec.task_kind {
        TaskKind::MultiChoice => {
            let question = fill_template(
                MC_TEMPLATES[phrasing.template],
                LEADS[phrasing.lead],
                vocab,
                &[subject_ids[subject]],
            );
            // Candidate pool: the realized attribute, the unrealized
            // alternative for ambiguous subjects, the decoy's attribute
            // (so attribute-spotting alone cannot solve the task), then
            // random distractors; order shuffled afterwards.
            let mut attrs: Vec<usize> = vec![realized];
            if let Some(alt) = facts.alternative[subject] {
                let other = if realized == alt {
                    facts.primary[subject]
                } else {
                    alt
                };
                if !attrs.contains(&other) && attrs.len() < spec.n_choices {
                    attrs.push(other);
                }
            }
            if !attrs.contains(&decoy_attr) && attrs.len() < spec.n_choices {
                attrs.push(decoy_attr);
            }
            let mut pool: Vec<usize> = (0..n_attrs).filter(|a| !attrs.contains(a)).collect();
            while attrs.len() < spec.n_choices {
                let pick = rng.random_range(0..pool.len());
                attrs.push(pool.swap_remove(pick));
            }
            let mut order: Vec<usize> = (0..spec.n_choices).collect();
            order.shuffle(rng);
            let candidates: Vec<Vec<TokenId>> = order
                .iter()
                .map(|&i| vec![attribute_ids[attrs[i]]])
                .collect();
            let gold_index = order.iter().position(|&i| i == 0).expect("gold present");
            Ok(TaskInstance {
                question,
                candidates,
                gold_index,
                ftr,
            })
        }
        TaskKind::YesNo => {
            let asked = if rng.random_bool(0.5) {
                realized
            } else {
                let mut other = rng.random_range(0..n_attrs - 1);
                if other >= realized {
                    other += 1;
                }
                other
            };
            let question = fill_template(
                YN_TEMPLATES[phrasing.template],
                LEADS[phrasing.lead],
                vocab,
                &[subject_ids[subject], attribute_ids[asked]],
            );
            let yes = vocab.id("yes").expect("yes in vocab");
            let no = vocab.id("no").expect("no in vocab");
            let candidates = vec![vec![yes], vec![no]];
            let gold_index = usize::from(asked != realized);
            Ok(TaskInstance {
                question,
                candidates,
                gold_index,
                ftr,
            })
        }
    }
}

/// Deterministic low-resource subsample: the first `fraction` of the training
/// split in seed-shuffled order.
pub fn subsample_train(
    train: &[TaskInstance],
    fraction: f64,
    seed: u64,
) -> Result<Vec<TaskInstance>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction {fraction} must lie in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(train.to_vec());
    }
    let k = ((fraction * train.len() as f64).ceil() as usize).max(1);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    Ok(idx[..k].iter().map(|&i| train[i].clone()).collect())
}

/// Rule-based rationale reader: locate the question's subject inside the
/// rationale and take the attribute token that follows it. By construction
/// this recovers the gold label on every split.
pub fn ftr_oracle_predict(
    instance: &TaskInstance,
    subject_ids: &[TokenId],
    attribute_ids: &[TokenId],
) -> Option<usize> {
    let subj = instance.question.iter().find(|t| subject_ids.contains(t))?;
    let at = instance.ftr.iter().position(|t| t == subj)?;
    let attr = instance.ftr[at..]
        .iter()
        .find(|t| attribute_ids.contains(t))?;
    // Multi-choice: the candidate equal to the realized attribute.
    if let Some(i) = instance
        .candidates
        .iter()
        .position(|c| c.as_slice() == [*attr])
    {
        return Some(i);
    }
    // Yes/no: compare against the attribute the question asks about.
    let asked = instance
        .question
        .iter()
        .find(|t| attribute_ids.contains(t))?;
    Some(usize::from(asked != attr))
}

impl Generated {
    /// [`ftr_oracle_predict`] with this dataset's generator-side knowledge.
    pub fn oracle_predict(&self, instance: &TaskInstance) -> Option<usize> {
        ftr_oracle_predict(instance, &self.subject_ids, &self.attribute_ids)
    }

    pub fn oracle_accuracy(&self, split: &[TaskInstance]) -> f64 {
        if split.is_empty() {
            return 0.0;
        }
        let correct = split
            .iter()
            .filter(|i| self.oracle_predict(i) == Some(i.gold_index))
            .count();
        correct as f64 / split.len() as f64
    }
}

/// Question-only baseline: counts (subject, gold label) pairs on the training
/// split, then votes for the most frequent label among an instance's
/// candidates. Ambiguous subjects cap its accuracy strictly below the
/// rationale reader's.
pub struct FrequencyOracle {
    subjects: HashSet<TokenId>,
    counts: HashMap<(TokenId, Vec<TokenId>), usize>,
}

impl FrequencyOracle {
    pub fn build(train: &[TaskInstance], subject_ids: &[TokenId]) -> Self {
        let subjects: HashSet<TokenId> = subject_ids.iter().copied().collect();
        let mut counts = HashMap::new();
        for inst in train {
            if let Some(subj) = inst.question.iter().find(|t| subjects.contains(t)) {
                let gold = inst.candidates[inst.gold_index].clone();
                *counts.entry((*subj, gold)).or_insert(0) += 1;
            }
        }
        Self { subjects, counts }
    }

    pub fn predict(&self, instance: &TaskInstance) -> usize {
        let subj = instance.question.iter().find(|t| self.subjects.contains(t));
        let mut best = 0;
        let mut best_count = 0usize;
        for (i, cand) in instance.candidates.iter().enumerate() {
            let count = subj
                .and_then(|s| self.counts.get(&(*s, cand.clone())))
                .copied()
                .unwrap_or(0);
            if count > best_count {
                best = i;
                best_count = count;
            }
        }
        best
    }

    pub fn accuracy(&self, split: &[TaskInstance]) -> f64 {
        if split.is_empty() {
            return 0.0;
        }
        let correct = split
            .iter()
            .filter(|i| self.predict(i) == i.gold_index)
            .count();
        correct as f64 / split.len() as f64
    }
}
