//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Fixture backends only.

mod common;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use halluguard::batch::{self, AuditLine, JudgeMode, Manifest, RESULTS_FILE};
use halluguard::crosscheck::{verify_entity, Branch, Decision, Verifiers};
use halluguard::enhancement::{
    describe_objects, identify_critical_objects, merge_final, EnhancementConfig, ADDITIONAL_INFO_PREFIX, DEFAULT_ALPHA,
};
use halluguard::gateway::fixture::{noise_draw, FixtureScenario, SceneFixture, SimulatedLlm};
use halluguard::gateway::{Backend, Request, Route, WireResponse};
use halluguard::pipeline::{Pipeline, PipelineConfig};
use halluguard::pope::{average_score, build_questions, f1_score, Gold, Strategy, VocabStats};
use halluguard::synth::{SynthOptions, SynthWorld};
use halluguard::{
    AnswerValue, BackendEndpoint, BackendRole, Canonicalizer, Endpoint, GatewayError, ImageRef, VerdictLedger,
};
use serde::Deserialize;

/// Percentage points allowed between recomputed and published metrics.
const METRIC_TOLERANCE_PP: f64 = 0.02;
const FAST_BUDGET: Duration = Duration::from_secs(1);
const CORPUS_BUDGET: Duration = Duration::from_secs(10);
const CORPUS_IMAGES: usize = 200;
const NOISE_RATE: f64 = 0.2;
const NOISE_CHECKS: usize = 1000;
const NOISE_MIN_AGREEMENT: f64 = 0.99;
const THRESHOLD_KEPT: f64 = 0.35;
const THRESHOLD_DROPPED: f64 = 0.349;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || format!("took {elapsed:?}, budget {budget:?}"))
}

#[derive(Deserialize)]
struct Row {
    row: String,
    p: f64,
    r: f64,
    f1: f64,
    acc: f64,
    avg: f64,
}

fn metric_arithmetic() -> Result<String, String> {
    let start = Instant::now();
    let tables: BTreeMap<String, Vec<Row>> =
        serde_json::from_str(include_str!("data/published_tables.json")).map_err(|e| e.to_string())?;
    let mut rows = 0;
    let mut misses = Vec::new();
    for (table, entries) in &tables {
        for row in entries {
            rows += 1;
            let f1 = f1_score(row.p, row.r);
            let avg = average_score(row.p, row.r, row.f1, row.acc);
            if (f1 - row.f1).abs() > METRIC_TOLERANCE_PP {
                misses.push(format!("{table}/{}: F1 {f1:.3} vs {:.2}", row.row, row.f1));
            }
            if (avg - row.avg).abs() > METRIC_TOLERANCE_PP {
                misses.push(format!("{table}/{}: average {avg:.3} vs {:.2}", row.row, row.avg));
            }
        }
    }
    within(start.elapsed(), FAST_BUDGET)?;
    ensure(rows == 43, || format!("expected 43 rows, found {rows}"))?;
    ensure(misses.is_empty(), || {
        format!("{} of {rows} rows outside ±{METRIC_TOLERANCE_PP}: {}", misses.len(), misses.join("; "))
    })?;
    Ok(format!("{rows} rows within ±{METRIC_TOLERANCE_PP}"))
}

struct Fixed(&'static str);

impl Backend for Fixed {
    fn call(&self, _: &BackendEndpoint, _: Route, _: &Request) -> Result<WireResponse, GatewayError> {
        Ok(WireResponse::text(self.0))
    }
}

fn fixed(id: &str, v: AnswerValue) -> Endpoint {
    let text = match v {
        AnswerValue::Yes => "yes",
        AnswerValue::No => "No.",
        AnswerValue::Unparseable => "unclear",
    };
    Endpoint::new(BackendEndpoint::fixture(id, BackendRole::BinaryVqa, "inline"), Arc::new(Fixed(text)))
}

fn truth_table() -> Result<String, String> {
    use AnswerValue::*;
    let start = Instant::now();
    let values = [Yes, No, Unparseable];
    let mut combos = 0;
    let mut pure = 0;
    for a in values {
        for b in values {
            for t in values {
                let v = Verifiers { primary_a: fixed("a", a), primary_b: fixed("b", b), tie_breaker: fixed("t", t) };
                let verdict = verify_entity(&ImageRef::new("img"), "bench", &v).map_err(|e| e.to_string())?;
                let agree = a == b && a != Unparseable;
                let (decision, branch) = match (agree, a, t) {
                    (true, Yes, _) => (Decision::Present, Branch::BothYes),
                    (true, _, _) => (Decision::Absent, Branch::BothNo),
                    (false, _, Yes) => (Decision::Present, Branch::TieBreakYes),
                    (false, _, No) => (Decision::Absent, Branch::TieBreakNo),
                    (false, _, Unparseable) => (Decision::Absent, Branch::UnparseableFallback),
                };
                ensure((verdict.decision, verdict.branch) == (decision, branch), || {
                    format!("({a:?},{b:?},{t:?}) gave {:?}/{:?}", verdict.decision, verdict.branch)
                })?;
                let tie_calls = v.tie_breaker.call_count();
                ensure(tie_calls == u64::from(!agree), || {
                    format!("({a:?},{b:?},{t:?}) tie-breaker calls {tie_calls}")
                })?;
                if [a, b, t].iter().all(|x| *x != Unparseable) {
                    let present = if a == b { a == Yes } else { t == Yes };
                    ensure((verdict.decision == Decision::Present) == present, || format!("pure ({a:?},{b:?},{t:?})"))?;
                    pure += 1;
                }
                combos += 1;
            }
        }
    }
    within(start.elapsed(), FAST_BUDGET)?;
    Ok(format!("{combos} combinations, {pure} pure, tie-breaker silent on agreement"))
}

fn single_image(pool: &[(&str, f64)], captions: &[&str]) -> (Endpoint, Endpoint, Endpoint) {
    let fx = Arc::new(
        SceneFixture::new([FixtureScenario {
            image_id: "g".into(),
            present_objects: pool.iter().map(|(t, _)| t.to_string()).collect(),
            tag_pool: pool.iter().map(|(t, s)| (t.to_string(), *s)).collect(),
            object_captions: captions.iter().map(|t| (t.to_string(), format!("The {t} is near the road."))).collect(),
            vqa_error_rate: 0.0,
            seed: 0,
        }])
        .expect("valid scene"),
    );
    (
        common::scene_endpoint("tag", BackendRole::Tagger, &fx),
        common::scene_endpoint("det", BackendRole::Detector, &fx),
        common::scene_endpoint("cap", BackendRole::Captioner, &fx),
    )
}

fn present_ledger(entities: &[&str]) -> VerdictLedger {
    let fx = Arc::new(
        SceneFixture::new([FixtureScenario {
            image_id: "g".into(),
            present_objects: entities.iter().map(|s| s.to_string()).collect(),
            tag_pool: Vec::new(),
            object_captions: Default::default(),
            vqa_error_rate: 0.0,
            seed: 0,
        }])
        .expect("valid scene"),
    );
    let v = Verifiers {
        primary_a: common::scene_endpoint("a", BackendRole::BinaryVqa, &fx),
        primary_b: common::scene_endpoint("b", BackendRole::BinaryVqa, &fx),
        tie_breaker: common::scene_endpoint("t", BackendRole::BinaryVqa, &fx),
    };
    let ents: Vec<String> = entities.iter().map(|s| s.to_string()).collect();
    halluguard::crosscheck::filter_entities(&ImageRef::new("g"), &ents, &v).expect("fixture verdicts")
}

fn enhancement_gating() -> Result<String, String> {
    let start = Instant::now();
    let img = ImageRef::new("g");
    let canon = Canonicalizer::default();
    let cfg = EnhancementConfig::default();
    ensure(cfg.alpha == DEFAULT_ALPHA && DEFAULT_ALPHA == THRESHOLD_KEPT, || "default alpha is not 0.35".into())?;

    // A rejected tag and an already-present tag come first; later tags must still be processed.
    let pool = [("truck", THRESHOLD_DROPPED), ("car", 0.9), ("bus", THRESHOLD_KEPT), ("traffic cone", 0.8)];
    let (tagger, detector, captioner) = single_image(&pool, &["car", "bus", "traffic cone"]);
    let ledger = present_ledger(&["car"]);
    let mut r =
        identify_critical_objects(&img, &ledger, &cfg, &tagger, &detector, &canon).map_err(|e| e.to_string())?;
    let retained: Vec<&str> = r.retained_tags.iter().map(|t| t.tag.as_str()).collect();
    ensure(retained == ["car", "bus", "traffic cone"], || format!("retained {retained:?}"))?;
    let rejected: Vec<&str> = r.rejected_below_threshold.iter().map(|t| t.tag.as_str()).collect();
    ensure(rejected == ["truck"], || format!("rejected {rejected:?}"))?;
    ensure(r.skipped_already_present == ["car"], || format!("skipped {:?}", r.skipped_already_present))?;
    ensure(r.to_describe == ["bus", "traffic cone"], || format!("to describe {:?}", r.to_describe))?;
    ensure(detector.call_count() == 4, || format!("detector calls {}", detector.call_count()))?;

    describe_objects(&img, &mut r, &captioner);
    let merged = merge_final("A car is parked.", &r);
    ensure(merged.matches(ADDITIONAL_INFO_PREFIX).count() == 1, || format!("prefix count in {merged:?}"))?;
    ensure(
        merged == "A car is parked. Some additional information includes: The bus is near the road. The traffic cone is near the road.",
        || format!("merged {merged:?}"),
    )?;

    let (tagger, detector, _) = single_image(&[("car", 0.9)], &["car"]);
    let r = identify_critical_objects(&img, &ledger, &cfg, &tagger, &detector, &canon).map_err(|e| e.to_string())?;
    let unchanged = merge_final("A car is parked.", &r);
    ensure(unchanged == "A car is parked." && !unchanged.contains(ADDITIONAL_INFO_PREFIX), || {
        format!("no descriptions but got {unchanged:?}")
    })?;
    within(start.elapsed(), FAST_BUDGET)?;
    Ok(format!(
        "{THRESHOLD_KEPT} kept, {THRESHOLD_DROPPED} dropped, present skipped, all tags processed, prefix iff described"
    ))
}

fn end_to_end_corpus() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let world = SynthWorld::generate(SynthOptions { images: CORPUS_IMAGES, seed: 2024, ..Default::default() });
    let files = world.write(dir.path()).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::load(&files.config).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::from_config(&cfg).map_err(|e| e.to_string())?;
    let manifest = Manifest::load(&files.manifest).map_err(|e| e.to_string())?;
    let run_dir = dir.path().join("run");
    let summary = batch::run_batch(&pipeline, &cfg, &manifest, 4, &run_dir).map_err(|e| e.to_string())?;
    ensure(summary.succeeded == CORPUS_IMAGES, || format!("{summary:?}"))?;

    let scenes: BTreeMap<&str, &FixtureScenario> =
        world.images.iter().map(|i| (i.scenario.image_id.as_str(), &i.scenario)).collect();
    let sim = SimulatedLlm::new(&world.lexicon());
    let mut removed = 0;
    for r in batch::read_results(&run_dir).map_err(|e| e.to_string())? {
        let scene = scenes[r.image_id.as_str()];
        let final_text = r.final_caption.unwrap_or_default();
        let absent: Vec<String> =
            sim.mentions(&final_text).into_iter().filter(|m| !scene.present_objects.contains(m)).collect();
        ensure(absent.is_empty(), || format!("{}: absent {absent:?} in {final_text:?}", r.image_id))?;
        removed += sim.mentions(&r.initial_caption).iter().filter(|m| !scene.present_objects.contains(*m)).count();
    }

    let audit: Vec<AuditLine> = batch::read_jsonl(&run_dir.join(batch::AUDIT_FILE)).map_err(|e| e.to_string())?;
    let mut covered: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in &audit {
        match line {
            AuditLine::Ledger(l) => covered
                .entry(l.image_id.clone())
                .or_default()
                .extend(l.verdicts.iter().filter(|v| v.decision == Decision::Present).map(|v| v.entity.clone())),
            AuditLine::Enhancement { image_id, result } => {
                covered.entry(image_id.clone()).or_default().extend(result.retained_tags.iter().map(|t| t.tag.clone()))
            }
            _ => {}
        }
    }
    let mut expected_objects = 0;
    for (id, scene) in &scenes {
        for (tag, score) in &scene.tag_pool {
            if *score >= cfg.enhancement.alpha
                && scene.present_objects.contains(tag)
                && cfg.enhancement.allows(tag, &Canonicalizer::default())
            {
                expected_objects += 1;
                let found = covered.get(*id).is_some_and(|c| c.contains(tag));
                ensure(found, || format!("{id}: {tag} ({score}) missing from ledger and enhancement"))?;
            }
        }
    }

    let corpus = world.ground_truth();
    let mut questions = Vec::new();
    for s in [Strategy::Random, Strategy::Popular, Strategy::Adversarial] {
        questions.extend(corpus.questions(s, 7).map_err(|e| e.to_string())?);
    }
    let judge = Endpoint::connect(cfg.backend("llm").ok_or("no judge")?.clone()).map_err(|e| e.to_string())?;
    let outcome = batch::evaluate(&run_dir, &questions, &judge, JudgeMode::Caption).map_err(|e| e.to_string())?;
    let before = outcome.reports["before"].overall.f1;
    let after = outcome.reports["after"].overall.f1;
    ensure(after >= before, || format!("after F1 {after:.4} < before {before:.4}"))?;
    within(start.elapsed(), CORPUS_BUDGET)?;
    Ok(format!(
        "{CORPUS_IMAGES} images, {removed} hallucinated mentions removed, {expected_objects} critical objects recalled, F1 {:.2} -> {:.2}",
        before * 100.0,
        after * 100.0
    ))
}

const NOISE_VOCAB: &[&str] =
    &["car", "truck", "bus", "person", "bicycle", "traffic light", "traffic cone", "bench", "dog", "tree"];

fn noise_robustness() -> Result<String, String> {
    use rand::{Rng, SeedableRng};
    let seed = 77;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let images = NOISE_CHECKS / NOISE_VOCAB.len();
    let scenarios: Vec<FixtureScenario> = (0..images)
        .map(|i| FixtureScenario {
            image_id: format!("noise-{i}"),
            present_objects: NOISE_VOCAB.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.to_string()).collect(),
            tag_pool: Vec::new(),
            object_captions: Default::default(),
            vqa_error_rate: 0.0,
            seed,
        })
        .collect();
    let noisy_scenes: Vec<FixtureScenario> =
        scenarios.iter().map(|s| FixtureScenario { vqa_error_rate: NOISE_RATE, ..s.clone() }).collect();
    let exact = Arc::new(SceneFixture::new(scenarios.clone()).map_err(|e| e.to_string())?);
    let noisy = Arc::new(SceneFixture::new(noisy_scenes).map_err(|e| e.to_string())?);
    let v = Verifiers {
        primary_a: common::scene_endpoint("verifier-a", BackendRole::BinaryVqa, &noisy),
        primary_b: common::scene_endpoint("verifier-b", BackendRole::BinaryVqa, &exact),
        tie_breaker: common::scene_endpoint("tie-breaker", BackendRole::BinaryVqa, &exact),
    };

    let mut agree = 0;
    let mut checks = 0;
    let mut flips = 0;
    for s in &scenarios {
        for entity in NOISE_VOCAB {
            let truth = s.present_objects.contains(*entity);
            let answer = |endpoint: &str, rate: f64| truth ^ (noise_draw(seed, &s.image_id, entity, endpoint) < rate);
            let (a, b, t) = (answer("verifier-a", NOISE_RATE), answer("verifier-b", 0.0), answer("tie-breaker", 0.0));
            flips += usize::from(a != truth);
            let simulated = if a == b { a } else { t };

            let verdict = verify_entity(&ImageRef::new(&s.image_id), entity, &v).map_err(|e| e.to_string())?;
            let decided = verdict.decision == Decision::Present;
            ensure(decided == simulated, || {
                format!("{} {entity}: pipeline {decided}, simulation {simulated}", s.image_id)
            })?;
            agree += usize::from(decided == truth);
            checks += 1;
        }
    }
    ensure(checks == NOISE_CHECKS, || format!("{checks} checks"))?;
    let rate = agree as f64 / checks as f64;
    ensure(rate >= NOISE_MIN_AGREEMENT, || format!("agreement {rate:.4}"))?;
    Ok(format!(
        "{checks} checks, {flips} flipped answers on verifier A, agreement {:.1}%, simulation exact",
        rate * 100.0
    ))
}

fn toy_stats() -> VocabStats {
    let images: Vec<BTreeSet<String>> = [
        &["car", "person", "tree"][..],
        &["car", "person", "bus"],
        &["car", "truck", "bench"],
        &["person", "dog", "tree"],
        &["car", "bus", "truck"],
        &["bicycle", "person", "traffic cone"],
        &["kite", "tree", "bench"],
        &["car", "person"],
        &["dog", "bicycle"],
        &["tree", "truck"],
    ]
    .iter()
    .map(|objs| objs.iter().map(|s| s.to_string()).collect())
    .collect();
    VocabStats::from_images(images.iter())
}

fn sorted_oracle(stats: &VocabStats, gt: &BTreeSet<String>, adversarial: bool) -> Vec<String> {
    let mut negatives: Vec<(Reverse<u64>, String)> = stats
        .vocabulary
        .iter()
        .filter(|o| !gt.contains(*o))
        .map(|o| {
            let key = if adversarial {
                gt.iter().map(|g| stats.cooccurrence.get(o).and_then(|m| m.get(g)).copied().unwrap_or(0)).sum()
            } else {
                stats.frequency[o]
            };
            (Reverse(key), o.clone())
        })
        .collect();
    negatives.sort();
    negatives.into_iter().take(gt.len().min(3)).map(|(_, o)| o).collect()
}

fn pope_generation() -> Result<String, String> {
    let stats = toy_stats();
    ensure(stats.vocabulary.len() == 10, || format!("toy vocabulary {}", stats.vocabulary.len()))?;
    let set = |items: &[&str]| -> BTreeSet<String> { items.iter().map(|s| s.to_string()).collect() };
    let hand: [(&[&str], Strategy, &[&str]); 4] = [
        (&["car", "person", "bus"], Strategy::Popular, &["tree", "truck", "bench"]),
        (&["tree", "bench"], Strategy::Popular, &["car", "person"]),
        (&["tree", "bench"], Strategy::Adversarial, &["car", "kite"]),
        (&["car", "person", "bus"], Strategy::Adversarial, &["tree", "truck", "bench"]),
    ];
    for (gt, strategy, expected) in hand {
        let gt = set(gt);
        let qs = build_questions("toy", &gt, &stats, strategy, 0).map_err(|e| e.to_string())?;
        let negatives: Vec<String> = qs.iter().filter(|q| q.gold == Gold::No).map(|q| q.object.clone()).collect();
        let oracle = sorted_oracle(&stats, &gt, strategy == Strategy::Adversarial);
        ensure(negatives == oracle, || format!("{strategy:?} {gt:?}: {negatives:?} vs oracle {oracle:?}"))?;
        ensure(negatives == expected, || format!("{strategy:?} {gt:?}: {negatives:?} vs hand {expected:?}"))?;
    }

    let world = SynthWorld::generate(SynthOptions { images: CORPUS_IMAGES, seed: 3, ..Default::default() });
    let corpus = world.ground_truth();
    let mut total = 0;
    for strategy in [Strategy::Random, Strategy::Popular, Strategy::Adversarial] {
        let qs = corpus.questions(strategy, 99).map_err(|e| e.to_string())?;
        ensure(qs == corpus.questions(strategy, 99).map_err(|e| e.to_string())?, || {
            format!("{strategy:?} not deterministic")
        })?;
        let mut per_image: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for q in &qs {
            let gt = &corpus.images.iter().find(|i| i.image_id == q.image_id).ok_or("unknown image")?.objects;
            ensure(gt.contains(&q.object) == (q.gold == Gold::Yes), || {
                format!("{} {} gold {:?}", q.image_id, q.object, q.gold)
            })?;
            let e = per_image.entry(&q.image_id).or_default();
            if q.gold == Gold::Yes {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        ensure(per_image.len() == CORPUS_IMAGES, || format!("{strategy:?}: {} images", per_image.len()))?;
        for (id, (yes, no)) in per_image {
            ensure(yes == no && yes > 0, || format!("{strategy:?} {id}: {yes} yes / {no} no"))?;
        }
        total += qs.len();
    }
    Ok(format!("toy samplers match oracles, {total} balanced questions over {CORPUS_IMAGES} images, seeded"))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let world = SynthWorld::generate(SynthOptions {
        images: CORPUS_IMAGES,
        seed: 8,
        verifier_a_error_rate: NOISE_RATE,
        ..Default::default()
    });
    let files = world.write(dir.path()).map_err(|e| e.to_string())?;
    let manifest = Manifest::load(&files.manifest).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, parallelism) in [1usize, 8, 1, 8].into_iter().enumerate() {
        let mut cfg = PipelineConfig::load(&files.config).map_err(|e| e.to_string())?;
        cfg.parallelism = parallelism;
        let pipeline = Pipeline::from_config(&cfg).map_err(|e| e.to_string())?;
        let run_dir = dir.path().join(format!("run-{i}"));
        batch::run_batch(&pipeline, &cfg, &manifest, parallelism, &run_dir).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(run_dir.join(RESULTS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(outputs.iter().all(|o| *o == outputs[0]), || "results.jsonl differs between runs".into())?;
    let lines = outputs[0].iter().filter(|b| **b == b'\n').count();
    ensure(lines == CORPUS_IMAGES, || format!("{lines} result lines"))?;
    Ok(format!("4 runs at parallelism 1 and 8, {} identical bytes", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 7] = [
        ("metric-arithmetic", metric_arithmetic),
        ("crosscheck-truth-table", truth_table),
        ("enhancement-gating", enhancement_gating),
        ("end-to-end-corpus", end_to_end_corpus),
        ("noise-robustness", noise_robustness),
        ("question-generation", pope_generation),
        ("batch-determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(detail) => println!("PASS {name} ({ms:.0} ms): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({ms:.0} ms): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
