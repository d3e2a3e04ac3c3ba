//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails. Oracles here are computed independently of
//! the library code they check.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hgie_core::corpus::{corpus_kappa, label_statistics, load_dataset, tokenize, Dataset};
use hgie_core::evaluator::{evaluate_intersection, EvalMode, EvalScores, Granularity};
use hgie_core::schema::{
    parse_annotations, prune_to_radgraph1, write_annotations, EntityType, Group, RelationKind,
    ReportGraph, Source, Split,
};
use hgie_core::taxonomy::{shipped, NodeId, TaxonomyTree};
use hgie_core::trainer::gradcheck::gradient_check_params;
use hgie_core::trainer::loss::{
    conditional_hier_loss_at, loss_at, unconditional_loss_at, LossKind,
};
use hgie_core::trainer::tagger::{
    decode_entities, encode_corpus, predict_tags, tagger_tree, TaggerParams,
};
use hgie_core::trainer::{train_two_phase, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Env var naming one or more RadGraph2 release files, separated by ':'.
const REAL_DATA_ENV: &str = "HGIE_RADGRAPH2_FILES";

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn trees() -> Vec<(&'static str, TaxonomyTree)> {
    shipped::NAMES
        .iter()
        .map(|n| (*n, shipped::load(n).unwrap().unwrap()))
        .collect()
}

fn random_logits(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Plain softmax without max-subtraction; fine for |logit| <= 10.
fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Ancestors of `id` from the root down, found by walking parent links.
fn root_path(tree: &TaxonomyTree, id: NodeId) -> Vec<NodeId> {
    let mut path = vec![id];
    let mut cur = id;
    while let Some(p) = tree.node(cur).parent {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

/// Leaf indices under `id`, found by scanning every leaf's ancestry.
fn leaves_under(tree: &TaxonomyTree, id: NodeId) -> Vec<usize> {
    tree.leaves()
        .iter()
        .enumerate()
        .filter(|(_, l)| root_path(tree, **l).contains(&id))
        .map(|(i, _)| i)
        .collect()
}

fn criterion_1_chain_rule() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for (_, tree) in trees() {
        for _ in 0..1000 {
            let logits = random_logits(&mut rng, tree.leaf_count(), 6.0);
            let p = naive_softmax(&logits);
            let masses = tree
                .propagate(&tree.leaf_distribution(&logits).unwrap())
                .unwrap();
            for (i, leaf) in tree.leaves().iter().enumerate() {
                let product: f64 = root_path(&tree, *leaf)
                    .into_iter()
                    .skip(1)
                    .map(|n| tree.conditional_probability(&masses, tree.name(n)).unwrap())
                    .product();
                worst = worst.max((product - p[i]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("max |prod P(child|parent) - p_leaf| = {worst:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_2_mass_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut sum_err, mut parent_bad, mut order_bad): (f64, usize, usize) = (0.0, 0, 0);
    for (_, tree) in trees() {
        for _ in 0..1000 {
            let logits = random_logits(&mut rng, tree.leaf_count(), 8.0);
            let dist = tree.leaf_distribution(&logits).unwrap();
            let m = tree.propagate(&dist).unwrap();
            sum_err = sum_err.max((dist.probs().iter().sum::<f64>() - 1.0).abs());
            for (id, node) in tree.nodes() {
                if node.children.is_empty() {
                    continue;
                }
                let children: f64 = node.children.iter().map(|c| m.get(*c)).sum();
                parent_bad += usize::from(children != m.get(id));
                order_bad += node
                    .children
                    .iter()
                    .filter(|c| m.get(**c) > m.get(id))
                    .count();
            }
        }
    }
    ensure(
        sum_err <= 1e-9 && parent_bad == 0 && order_bad == 0,
        format!("leaf-sum error {sum_err:.2e}, parent!=sum(children) {parent_bad}, child>parent {order_bad}"),
    )
}

/// Conditional loss at uniform logits from leaf counts alone.
fn uniform_oracle(tree: &TaxonomyTree, gold: &str) -> f64 {
    let k = tree.leaf_count() as f64;
    let leaf = tree.id(gold).unwrap();
    root_path(tree, leaf)
        .into_iter()
        .skip(1)
        .map(|n| -(leaves_under(tree, n).len() as f64 / k).ln())
        .sum()
}

fn criterion_3_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0usize;
    for (_, tree) in trees() {
        for _ in 0..1000 {
            let logits = random_logits(&mut rng, tree.leaf_count(), 6.0);
            let gold = rng.gen_range(0..tree.leaf_count());
            let c = conditional_hier_loss_at(&tree, &logits, gold).unwrap().loss;
            let u = unconditional_loss_at(&tree, &logits, gold).unwrap().loss;
            violations += usize::from(c < u - 1e-9);
        }
    }
    let tree = shipped::radgraph2_depth3();
    let zeros = vec![0.0; tree.leaf_count()];
    let mut spot = Vec::new();
    let mut spot_ok = true;
    for (gold, rounded) in [
        ("CHAN-CON-IMP", 3.9890),
        ("ANAT-DP", 4.9698),
        ("CHAN-NC", 2.8904),
    ] {
        let got = conditional_hier_loss_at(&tree, &zeros, tree.leaf_index(gold).unwrap())
            .unwrap()
            .loss;
        let oracle = uniform_oracle(&tree, gold);
        spot_ok &= (got - oracle).abs() < 1e-6 && (got - rounded).abs() < 5e-5;
        spot.push(format!("{gold}={got:.4}"));
    }
    ensure(
        violations == 0 && spot_ok,
        format!(
            "{violations} dominance violations in 3000 trials; {}",
            spot.join(" ")
        ),
    )
}

fn central_difference(
    kind: LossKind,
    tree: &TaxonomyTree,
    logits: &[f64],
    gold: usize,
) -> Vec<f64> {
    let h = 1e-5;
    (0..logits.len())
        .map(|j| {
            let mut up = logits.to_vec();
            let mut down = logits.to_vec();
            up[j] += h;
            down[j] -= h;
            (loss_at(kind, tree, &up, gold).unwrap().loss
                - loss_at(kind, tree, &down, gold).unwrap().loss)
                / (2.0 * h)
        })
        .collect()
}

fn criterion_4_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for name in ["radgraph2_depth2", "radgraph2_depth3"] {
        let tree = shipped::load(name).unwrap().unwrap();
        for _ in 0..100 {
            let logits = random_logits(&mut rng, tree.leaf_count(), 4.0);
            let gold = rng.gen_range(0..tree.leaf_count());
            for kind in [LossKind::Conditional, LossKind::Unconditional] {
                let analytic = loss_at(kind, &tree, &logits, gold).unwrap().grad;
                let numeric = central_difference(kind, &tree, &logits, gold);
                for (a, n) in analytic.iter().zip(&numeric) {
                    worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
                }
            }
        }
    }
    // Parameter-level check through the tagger on a small corpus.
    let ds = Dataset::from_json(
        &std::fs::read_to_string(manifest_dir().join("fixtures/synthetic_small.json")).unwrap(),
    )
    .unwrap();
    let tree = shipped::radgraph2_depth3();
    let ttree = tagger_tree(&tree).unwrap();
    let params = TaggerParams::init(&tree, &ds, 8, 2, &mut rng);
    let corpus = encode_corpus(&params, &ttree, &ds).unwrap();
    let batch = &corpus.examples[..corpus.examples.len().min(40)];
    let mut param_worst: f64 = 0.0;
    let mut coords = 0;
    for kind in [LossKind::Conditional, LossKind::Unconditional] {
        let c = gradient_check_params(&params, &ttree, kind, &corpus.docs, batch, 210, &mut rng);
        param_worst = param_worst.max(c.max_rel_error);
        coords += c.coordinates;
    }
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-4 && param_worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("logit max rel err {worst:.2e}, parameter max rel err {param_worst:.2e} over {coords} coords, {elapsed:.2?}"),
    )
}

fn predict_entities_only(params: &TaggerParams, ds: &Dataset) -> Dataset {
    ds.map_reports(|r| {
        let mut g = ReportGraph::unannotated(&r.doc_id, &r.text, r.split, r.source);
        g.tokens = r.tokens.clone();
        let tags = predict_tags(params, &r.tokens);
        for e in decode_entities(&tags, &r.tokens, Default::default()) {
            g.entities.insert(e.id.clone(), e);
        }
        g
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn criterion_5_two_phase_benefit() -> Outcome {
    let start = Instant::now();
    let ds = load_dataset(manifest_dir().join("fixtures/rare_labels.json")).unwrap();
    let train = ds.subset(&[Split::Train]);
    let test = ds.subset(&[Split::Test]);
    let tree = shipped::radgraph2_depth3();
    let macro_f1 = |cfg: &TrainConfig| {
        let params = train_two_phase(&train, &tree, cfg).unwrap().params;
        let pred = predict_entities_only(&params, &test);
        evaluate_intersection(&test, &pred, EvalMode::Radgraph2, Granularity::Leaf)
            .unwrap()
            .entity_f1_macro
    };
    let (mut two, mut flat, mut flat_budget) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5 {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        two.push(macro_f1(&cfg));
        flat.push(macro_f1(&cfg.clone().flat()));
        let same_budget = TrainConfig {
            phase2_epochs: cfg.phase1_epochs + cfg.phase2_epochs,
            ..cfg.clone().flat()
        };
        flat_budget.push(macro_f1(&same_budget));
    }
    let (m2, mf, mb) = (median(two), median(flat), median(flat_budget));
    let elapsed = start.elapsed();
    ensure(
        m2 >= mf && elapsed < Duration::from_secs(120),
        format!(
            "median held-out entity macro-F1: two-phase {m2:.4}, flat {mf:.4} (flat at equal epoch budget {mb:.4}), {elapsed:.2?}"
        ),
    )
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hgie"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn criterion_6_depth_ablation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = manifest_dir().join("fixtures/rare_labels.json");
    let data = data.to_str().unwrap();
    let mut outputs = Vec::new();
    for taxonomy in ["radgraph2_depth2", "radgraph2_depth3"] {
        let model = dir.path().join(format!("{taxonomy}.model.json"));
        let pred = dir.path().join(format!("{taxonomy}.pred.json"));
        let metrics = dir.path().join(format!("{taxonomy}.metrics.jsonl"));
        let (m, p) = (model.to_str().unwrap(), pred.to_str().unwrap());
        let steps: [Vec<&str>; 3] = [
            vec![
                "train",
                data,
                "--taxonomy",
                taxonomy,
                "--seed",
                "0",
                "-o",
                m,
                "--metrics",
                metrics.to_str().unwrap(),
            ],
            vec!["predict", m, data, "--split", "test", "-o", p],
            vec!["eval", data, p, "--split", "test", "--json"],
        ];
        let mut last = String::new();
        for args in steps {
            let (code, stdout, stderr) = run_cli(&args);
            if code != 0 {
                return Outcome::Fail(format!("{taxonomy}: `{}` exited {code}: {stderr}", args[0]));
            }
            last = stdout;
        }
        let v: serde_json::Value = match serde_json::from_str(&last) {
            Ok(v) => v,
            Err(e) => return Outcome::Fail(format!("{taxonomy}: eval output is not JSON: {e}")),
        };
        outputs.push((taxonomy, v));
    }
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    let same_keys = keys(&outputs[0].1) == keys(&outputs[1].1);
    let summary: Vec<String> = outputs
        .iter()
        .map(|(t, v)| {
            format!(
                "{t}: entity macro {:.3} relation micro {:.3}",
                v["entity_f1_macro"].as_f64().unwrap_or(f64::NAN),
                v["relation_f1_micro"].as_f64().unwrap_or(f64::NAN)
            )
        })
        .collect();
    ensure(same_keys, summary.join("; "))
}

/// O(n^2) matcher: each prediction takes the first unmatched equal gold item.
fn brute_force(
    gold: &Dataset,
    pred: &Dataset,
) -> (BTreeMap<String, [usize; 3]>, BTreeMap<String, [usize; 3]>) {
    let mut ent: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut rel: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for g in gold.reports() {
        let p = pred.get(&g.doc_id).unwrap();
        let ge: Vec<_> = g.entities.values().collect();
        let pe: Vec<_> = p.entities.values().collect();
        let mut used = vec![false; ge.len()];
        for e in &ge {
            ent.entry(e.label.as_str().into()).or_default()[2] += 1;
        }
        for e in &pe {
            let slot = ent.entry(e.label.as_str().into()).or_default();
            slot[1] += 1;
            for (i, x) in ge.iter().enumerate() {
                if !used[i]
                    && x.start_ix == e.start_ix
                    && x.end_ix == e.end_ix
                    && x.label == e.label
                {
                    used[i] = true;
                    slot[0] += 1;
                    break;
                }
            }
        }
        let same = |a: &ReportGraph, ai: &str, b: &ReportGraph, bi: &str| {
            let (x, y) = (&a.entities[ai], &b.entities[bi]);
            x.start_ix == y.start_ix && x.end_ix == y.end_ix && x.label == y.label
        };
        let mut used = vec![false; g.relations.len()];
        for r in &g.relations {
            rel.entry(r.kind.as_str().into()).or_default()[2] += 1;
        }
        for r in &p.relations {
            let slot = rel.entry(r.kind.as_str().into()).or_default();
            slot[1] += 1;
            for (i, x) in g.relations.iter().enumerate() {
                if !used[i]
                    && x.kind == r.kind
                    && same(g, &x.source_id, p, &r.source_id)
                    && same(g, &x.target_id, p, &r.target_id)
                {
                    used[i] = true;
                    slot[0] += 1;
                    break;
                }
            }
        }
    }
    (ent, rel)
}

fn f1_of([tp, pred, gold]: [usize; 3]) -> f64 {
    let p = if pred == 0 {
        0.0
    } else {
        tp as f64 / pred as f64
    };
    let r = if gold == 0 {
        0.0
    } else {
        tp as f64 / gold as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn scores_agree(
    s: &EvalScores,
    ent: &BTreeMap<String, [usize; 3]>,
    rel: &BTreeMap<String, [usize; 3]>,
) -> bool {
    let check = |lib: &BTreeMap<String, hgie_core::evaluator::TypeScore>,
                 micro_lib: f64,
                 macro_lib: f64,
                 oracle: &BTreeMap<String, [usize; 3]>| {
        let supported: BTreeMap<_, _> = oracle.iter().filter(|(_, c)| c[1] + c[2] > 0).collect();
        if lib.len() != supported.len() {
            return false;
        }
        for (k, c) in &supported {
            match lib.get(*k) {
                Some(t) if [t.tp, t.pred, t.gold] == **c => {}
                _ => return false,
            }
        }
        let pooled = oracle
            .values()
            .fold([0; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]]);
        let macro_oracle = if supported.is_empty() {
            0.0
        } else {
            supported.values().map(|c| f1_of(**c)).sum::<f64>() / supported.len() as f64
        };
        (micro_lib - f1_of(pooled)).abs() < 1e-12 && (macro_lib - macro_oracle).abs() < 1e-12
    };
    check(
        &s.per_type.entities,
        s.entity_f1_micro,
        s.entity_f1_macro,
        ent,
    ) && check(
        &s.per_type.relations,
        s.relation_f1_micro,
        s.relation_f1_macro,
        rel,
    )
}

fn random_report(rng: &mut ChaCha8Rng, doc: &str, labels: &[EntityType]) -> ReportGraph {
    let mut g = ReportGraph::unannotated(doc, "t0 t1 t2 t3 t4 t5", Split::Test, Source::MimicCxr);
    let n = rng.gen_range(0..=4);
    for i in 0..n {
        let s = rng.gen_range(0..4);
        let e = s + rng.gen_range(0..2);
        g.add_entity(
            &format!("e{i}"),
            s,
            e,
            labels[rng.gen_range(0..labels.len())],
        );
    }
    if n >= 2 {
        for _ in 0..rng.gen_range(0..=3) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                let kind = RelationKind::ALL[rng.gen_range(0..3)];
                g.add_relation(&format!("e{a}"), &format!("e{b}"), kind);
            }
        }
    }
    g
}

fn criterion_7_eval_oracle() -> Outcome {
    use EntityType::*;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    // A narrow label set so random predictions collide with gold often.
    let labels = [AnatDp, ObsDp, ObsU, ChanNc];
    let mut disagreements = 0;
    let fixtures = 200;
    for _ in 0..fixtures {
        let gold: Vec<_> = (0..10)
            .map(|i| random_report(&mut rng, &format!("r{i}"), &labels))
            .collect();
        let pred: Vec<_> = gold
            .iter()
            .map(|g| {
                if rng.gen_bool(0.3) {
                    g.clone()
                } else {
                    random_report(&mut rng, &g.doc_id, &labels)
                }
            })
            .collect();
        let (gold, pred) = (Dataset::new(gold).unwrap(), Dataset::new(pred).unwrap());
        let s =
            evaluate_intersection(&gold, &pred, EvalMode::Radgraph2, Granularity::Leaf).unwrap();
        let (ent, rel) = brute_force(&gold, &pred);
        disagreements += usize::from(!scores_agree(&s, &ent, &rel));
    }
    let mut g = ReportGraph::unannotated("w", "a b c d e", Split::Test, Source::MimicCxr);
    let mut p = g.clone();
    for (id, s, l) in [("1", 0, AnatDp), ("2", 1, ObsDp), ("3", 3, ObsDa)] {
        g.add_entity(id, s, s, l);
    }
    for (id, s, l) in [("1", 0, AnatDp), ("2", 1, ObsU), ("3", 4, ObsDp)] {
        p.add_entity(id, s, s, l);
    }
    let (g, p) = (
        Dataset::new(vec![g]).unwrap(),
        Dataset::new(vec![p]).unwrap(),
    );
    let w = evaluate_intersection(&g, &p, EvalMode::Radgraph2, Granularity::Leaf).unwrap();
    let third = 1.0 / 3.0;
    let worked = w.entity_micro.tp == 1
        && w.entity_micro.pred - w.entity_micro.tp == 2
        && w.entity_micro.gold - w.entity_micro.tp == 2
        && w.entity_micro.precision == third
        && w.entity_micro.recall == third
        && (w.entity_f1_micro - third).abs() < 1e-15;
    ensure(
        disagreements == 0 && worked,
        format!(
            "{disagreements} of {fixtures} ten-report fixtures disagree with brute force; worked example micro F1 = {:.6}",
            w.entity_f1_micro
        ),
    )
}

fn criterion_8_real_data() -> Outcome {
    let Ok(files) = std::env::var(REAL_DATA_ENV) else {
        return Outcome::Skip(format!("{REAL_DATA_ENV} not set"));
    };
    let mut parts = Vec::new();
    for f in files.split(':').filter(|s| !s.is_empty()) {
        match load_dataset(Path::new(f)) {
            Ok(d) => parts.push(d),
            Err(e) => return Outcome::Fail(format!("{f}: {e}")),
        }
    }
    let ds = match Dataset::merge(parts) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let stats = label_statistics(&ds);
    let totals = |split, source| {
        stats
            .column(split, source)
            .map(|c| (c.entity_total(), c.relation_total()))
    };
    let train = stats.column(Split::Train, Source::MimicCxr);
    let anat = train.map(|c| (c.entities[0], format!("{:.1}", c.entity_percent(0))));
    let checks = [
        (
            anat == Some((7081, "41.9".to_string())),
            "train ANAT 7081 (41.9%)",
        ),
        (
            totals(Split::Train, Source::MimicCxr) == Some((16913, 12533)),
            "train 16913/12533",
        ),
        (
            totals(Split::Validation, Source::MimicCxr) == Some((2260, 1692)),
            "validation 2260/1692",
        ),
        (
            totals(Split::Test, Source::MimicCxr) == Some((2783, 1981)),
            "MIMIC-CXR test 2783/1981",
        ),
        (
            totals(Split::Test, Source::CheXpert) == Some((1501, 1167)),
            "CheXpert test 1501/1167",
        ),
    ];
    let failed: Vec<_> = checks
        .iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, n)| *n)
        .collect();
    ensure(failed.is_empty(), format!("mismatched: {failed:?}"))
}

fn criterion_9_kappa() -> Outcome {
    let mk = |spans: &[usize]| {
        let mut g = ReportGraph::unannotated("k", "a b c d", Split::Train, Source::MimicCxr);
        for (i, s) in spans.iter().enumerate() {
            g.add_entity(&(i + 1).to_string(), *s, *s, EntityType::AnatDp);
        }
        Dataset::new(vec![g]).unwrap()
    };
    let a = mk(&[0, 1]);
    let b = mk(&[0, 2]);
    let same = corpus_kappa(&a, &a).unwrap();
    let half = corpus_kappa(&a, &b).unwrap();
    ensure(
        format!("{same:.4}") == "1.0000" && half.abs() <= 1e-9,
        format!(
            "identical {same:.4}, half/half {half:.4}; published 0.9943/0.9963 not reproducible without raw double annotations"
        ),
    )
}

fn random_full_graph(rng: &mut ChaCha8Rng, i: usize) -> ReportGraph {
    let mut g = ReportGraph::unannotated(
        &format!("g{i}"),
        "w0 w1 w2 w3 w4 w5 w6 w7",
        Split::Train,
        Source::MimicCxr,
    );
    let n = rng.gen_range(0..8);
    for e in 0..n {
        let s = rng.gen_range(0..8);
        g.add_entity(
            &format!("{}", e + 1),
            s,
            s,
            EntityType::ALL[rng.gen_range(0..12)],
        );
    }
    for _ in 0..rng.gen_range(0..10) {
        if n < 2 {
            break;
        }
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(1..=n);
        if a != b {
            g.add_relation(
                &a.to_string(),
                &b.to_string(),
                RelationKind::ALL[rng.gen_range(0..3)],
            );
        }
    }
    g
}

fn criterion_10_prune_and_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut prune_bad = 0;
    for i in 0..100 {
        let g = random_full_graph(&mut rng, i);
        let once = prune_to_radgraph1(&g);
        let twice = prune_to_radgraph1(&once);
        let no_chan = once
            .entities
            .values()
            .all(|e| e.label.group() != Group::Chan);
        prune_bad += usize::from(once != twice || !no_chan);
    }
    let mut trip_bad = Vec::new();
    let mut files = 0;
    for entry in std::fs::read_dir(manifest_dir().join("fixtures")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            files += 1;
            let text = std::fs::read_to_string(&path).unwrap();
            let graphs = parse_annotations(&text).unwrap();
            let again = parse_annotations(&write_annotations(&graphs)).unwrap();
            if graphs != again {
                trip_bad.push(path.display().to_string());
            }
        }
    }
    let tokens = tokenize("no change.");
    ensure(
        prune_bad == 0 && trip_bad.is_empty() && files > 0 && tokens == ["no", "change", "."],
        format!(
            "prune failures {prune_bad}/100; round-trip failures {trip_bad:?} over {files} fixtures; \"no change.\" -> {} tokens",
            tokens.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1 chain rule", criterion_1_chain_rule),
        ("C2 subtree mass invariants", criterion_2_mass_invariants),
        ("C3 loss dominance and spot values", criterion_3_dominance),
        ("C4 gradient correctness", criterion_4_gradients),
        ("C5 two-phase benefit", criterion_5_two_phase_benefit),
        ("C6 depth ablation harness", criterion_6_depth_ablation),
        ("C7 evaluation oracle", criterion_7_eval_oracle),
        ("C8 real-data statistics", criterion_8_real_data),
        ("C9 kappa", criterion_9_kappa),
        (
            "C10 pruning and round-trip",
            criterion_10_prune_and_round_trip,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    println!("\nacceptance criteria");
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed or skipped");
}
