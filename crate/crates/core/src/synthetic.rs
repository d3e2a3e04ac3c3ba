//! Deterministic template-based corpus of chest X-ray style reports.
//!
//! Every report is a few short sentences built from fixed templates, so gold
//! entities and relations are known exactly. Two leaf labels
//! (CHAN-CON-RES and CHAN-DEV-PLACE) are drawn at a small configurable rate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::schema::{EntityType, RelationKind, ReportGraph, Source, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_reports: usize,
    pub test_reports: usize,
    pub sentences_per_report: (usize, usize),
    /// Probability that a change sentence uses a rare change label.
    pub rare_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_reports: 240,
            test_reports: 100,
            sentences_per_report: (3, 5),
            rare_rate: 0.06,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// Six-report corpus used as a small fixture.
    pub fn small() -> Self {
        Self {
            train_reports: 4,
            test_reports: 2,
            sentences_per_report: (2, 3),
            rare_rate: 0.0,
            seed: 1,
        }
    }
}

const ANATOMY: [&str; 8] = [
    "lung",
    "lobe",
    "base",
    "apex",
    "heart",
    "mediastinum",
    "hemidiaphragm",
    "hilum",
];
const FINDINGS: [&str; 7] = [
    "effusion",
    "opacity",
    "edema",
    "atelectasis",
    "pneumothorax",
    "consolidation",
    "nodule",
];
/// Words that only ever occur in held-out reports.
const HELD_OUT_ANATOMY: [&str; 3] = ["trachea", "carina", "fissure"];
const HELD_OUT_FINDINGS: [&str; 4] = ["infiltrate", "scarring", "fibrosis", "emphysema"];
const DIAGNOSES: [&str; 3] = ["pneumonia", "infection", "aspiration"];
const DEVICES: [&str; 4] = ["tube", "catheter", "line", "pacemaker"];
const SIZES: [&str; 4] = ["small", "moderate", "large", "mild"];

const NO_CHANGE: [&str; 2] = ["stable", "unchanged"];
const APPEARED: [&str; 1] = ["new"];
const WORSENED: [&str; 2] = ["worsening", "increased"];
const IMPROVED: [&str; 2] = ["improved", "decreased"];
/// Direction-neutral change word, annotated as worsening or improvement.
const CHANGED: &str = "changed";
const RESOLVED: [&str; 2] = ["resolved", "cleared"];
const DEV_PLACED: [&str; 2] = ["placed", "inserted"];
const DEV_MOVED: [&str; 2] = ["repositioned", "advanced"];
const DEV_REMOVED: [&str; 2] = ["removed", "withdrawn"];

struct Builder<'r, R: Rng> {
    rng: &'r mut R,
    held_out: bool,
    tokens: Vec<String>,
    entities: Vec<(usize, usize, EntityType)>,
    relations: Vec<(usize, usize, RelationKind)>,
}

impl<R: Rng> Builder<'_, R> {
    fn words(&mut self, text: &str) {
        self.tokens
            .extend(text.split_whitespace().map(str::to_string));
    }

    fn entity(&mut self, word: &str, label: EntityType) -> usize {
        let start = self.tokens.len();
        self.words(word);
        self.entities.push((start, self.tokens.len() - 1, label));
        self.entities.len() - 1
    }

    fn either(&mut self, a: &str, b: &str) {
        let w = if self.rng.gen_bool(0.5) { a } else { b };
        self.words(w);
    }

    fn pick(&mut self, words: &[&'static str]) -> &'static str {
        words.choose(self.rng).unwrap()
    }

    fn anatomy(&mut self) -> &'static str {
        if self.held_out && self.rng.gen_bool(0.3) {
            self.pick(&HELD_OUT_ANATOMY)
        } else {
            self.pick(&ANATOMY)
        }
    }

    fn finding(&mut self) -> &'static str {
        if self.held_out && self.rng.gen_bool(0.3) {
            self.pick(&HELD_OUT_FINDINGS)
        } else {
            self.pick(&FINDINGS)
        }
    }

    fn relate(&mut self, src: usize, dst: usize, kind: RelationKind) {
        self.relations.push((src, dst, kind));
    }

    fn located(&mut self, finding: usize) {
        self.either("in the", "at the");
        let w = self.anatomy();
        let a = self.entity(w, EntityType::AnatDp);
        self.relate(finding, a, RelationKind::LocatedAt);
    }

    fn present(&mut self) {
        match self.rng.gen_range(0..3) {
            0 => self.words("there is"),
            1 => self.words("there is evidence of"),
            _ => {}
        }
        let size = self.pick(&SIZES);
        self.words(size);
        let w = self.finding();
        let f = self.entity(w, EntityType::ObsDp);
        self.located(f);
    }

    fn absent(&mut self) {
        match self.rng.gen_range(0..3) {
            0 => self.words("no"),
            1 => self.words("there is no"),
            // Negation cue three tokens before the finding.
            _ => self.words("no evidence of"),
        }
        let w = self.finding();
        let f = self.entity(w, EntityType::ObsDa);
        if self.rng.gen_bool(0.4) {
            self.located(f);
        }
    }

    fn uncertain(&mut self) {
        let w = self.finding();
        let f = self.entity(w, EntityType::ObsDp);
        self.either("may represent", "could reflect");
        let d = self.pick(&DIAGNOSES);
        let u = self.entity(d, EntityType::ObsU);
        self.relate(f, u, RelationKind::SuggestiveOf);
    }

    fn change(&mut self, rare_rate: f64) {
        let rare = self.rng.gen_bool(rare_rate);
        let (words, label): (&[&'static str], EntityType) = if rare {
            (&RESOLVED, EntityType::ChanConRes)
        } else {
            *[
                (&NO_CHANGE[..], EntityType::ChanNc),
                (&APPEARED[..], EntityType::ChanConAp),
                (&WORSENED[..], EntityType::ChanConWor),
                (&IMPROVED[..], EntityType::ChanConImp),
            ]
            .choose(self.rng)
            .unwrap()
        };
        let finding_label = if label == EntityType::ChanConRes {
            EntityType::ObsDa
        } else {
            EntityType::ObsDp
        };
        let w = self.finding();
        let f = self.entity(w, finding_label);
        self.either("is", "has");
        let ambiguous = matches!(label, EntityType::ChanConWor | EntityType::ChanConImp)
            && self.rng.gen_bool(0.25);
        let cw = if ambiguous { CHANGED } else { self.pick(words) };
        let c = self.entity(cw, label);
        self.relate(c, f, RelationKind::Modify);
        if self.rng.gen_bool(0.5) {
            self.words("since the prior study");
        }
    }

    fn device(&mut self, rare_rate: f64) {
        let (words, label): (&[&'static str], EntityType) = if self.rng.gen_bool(rare_rate) {
            (&DEV_MOVED, EntityType::ChanDevPlace)
        } else if self.rng.gen_bool(0.5) {
            (&DEV_PLACED, EntityType::ChanDevAp)
        } else {
            (&DEV_REMOVED, EntityType::ChanDevDisa)
        };
        self.words("the");
        let d = self.pick(&DEVICES);
        let dev = self.entity(d, EntityType::ObsDp);
        self.words("has been");
        let cw = self.pick(words);
        let c = self.entity(cw, label);
        self.relate(c, dev, RelationKind::Modify);
    }
}

fn report<R: Rng>(rng: &mut R, doc_id: &str, split: Split, cfg: &SyntheticConfig) -> ReportGraph {
    let mut b = Builder {
        rng,
        held_out: split != Split::Train,
        tokens: Vec::new(),
        entities: Vec::new(),
        relations: Vec::new(),
    };
    let (lo, hi) = cfg.sentences_per_report;
    let n = b.rng.gen_range(lo..=hi);
    for _ in 0..n {
        match b.rng.gen_range(0..10) {
            0..=2 => b.present(),
            3..=4 => b.absent(),
            5 => b.uncertain(),
            6..=8 => b.change(cfg.rare_rate),
            _ => b.device(cfg.rare_rate),
        }
        b.words(".");
    }
    let Builder {
        tokens,
        entities,
        relations,
        ..
    } = b;
    let mut g = ReportGraph::unannotated(doc_id, &tokens.join(" "), split, Source::Synthetic);
    for (i, (s, e, l)) in entities.iter().enumerate() {
        g.add_entity(&(i + 1).to_string(), *s, *e, *l);
    }
    for (s, t, k) in relations {
        g.add_relation(&(s + 1).to_string(), &(t + 1).to_string(), k);
    }
    g
}

pub fn generate(cfg: &SyntheticConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(cfg.train_reports + cfg.test_reports);
    for i in 0..cfg.train_reports {
        reports.push(report(
            &mut rng,
            &format!("syn-train-{i:04}"),
            Split::Train,
            cfg,
        ));
    }
    for i in 0..cfg.test_reports {
        reports.push(report(
            &mut rng,
            &format!("syn-test-{i:04}"),
            Split::Test,
            cfg,
        ));
    }
    Dataset::new(reports).expect("generated doc ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{validate_graph, Severity};

    #[test]
    fn generated_reports_are_valid() {
        let ds = generate(&SyntheticConfig::default());
        assert_eq!(ds.len(), 340);
        for r in ds.reports() {
            let errors: Vec<_> = validate_graph(r)
                .into_iter()
                .filter(|v| v.severity() == Severity::Error)
                .collect();
            assert!(errors.is_empty(), "{}: {errors:?}", r.doc_id);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig::small();
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(
            generate(&cfg),
            generate(&SyntheticConfig { seed: 2, ..cfg })
        );
    }

    #[test]
    fn rare_labels_are_rare_but_present() {
        let ds = generate(&SyntheticConfig::default());
        let mut total = 0usize;
        let mut rare = 0usize;
        let mut rare_test = 0usize;
        for r in ds.reports() {
            for e in r.entities.values() {
                total += 1;
                if matches!(e.label, EntityType::ChanConRes | EntityType::ChanDevPlace) {
                    rare += 1;
                    rare_test += usize::from(r.split == Split::Test);
                }
            }
        }
        let share = rare as f64 / total as f64;
        assert!(share > 0.0 && share < 0.02, "{share}");
        assert!(rare_test > 0);
    }
}
