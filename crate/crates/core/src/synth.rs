//! Seeded synthetic street scenes for offline runs.
//!
//! Each scene has a known object set. Captions mention some present objects
//! and a few absent ones, one object per clause, so the simulated text model
//! can rewrite them faithfully. Tag pools score absent objects below the
//! detection threshold and every tag at or above it has a caption.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::batch::{Manifest, ManifestEntry};
use crate::enhancement::DEFAULT_ALPHA;
use crate::gateway::fixture::{FixtureScenario, TextGenScript};
use crate::pope::{GroundTruthCorpus, GroundTruthImage};

pub const SYNTH_VOCABULARY: &[&str] = &[
    "car",
    "truck",
    "bus",
    "person",
    "bicycle",
    "motorcycle",
    "traffic light",
    "traffic sign",
    "traffic cone",
    "stroller",
    "barrier",
    "tree",
    "bench",
    "dog",
    "building",
    "fire hydrant",
    "umbrella",
    "backpack",
    "bird",
    "kite",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub images: usize,
    pub seed: u64,
    /// Noise applied to verifier A only; the other vision backends stay exact.
    pub verifier_a_error_rate: f64,
    pub max_hallucinations: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { images: 200, seed: 0, verifier_a_error_rate: 0.0, max_hallucinations: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub scenario: FixtureScenario,
    pub caption: String,
    /// Absent objects the caption mentions.
    pub hallucinated: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub options: SynthOptions,
    pub images: Vec<SynthImage>,
}

/// Files written by [`SynthWorld::write`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub scenes: PathBuf,
    pub textgen: PathBuf,
}

fn json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)
}

fn clause(object: &str, first: bool) -> String {
    let article = if first { "A" } else { "a" };
    format!("{article} {object} can be seen")
}

fn caption_for(objects: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut sentences = Vec::new();
    let mut rest = objects;
    while !rest.is_empty() {
        let take = if rest.len() >= 2 && rng.gen_bool(0.5) { 2 } else { 1 };
        let (group, tail) = rest.split_at(take);
        let clauses: Vec<String> = group.iter().enumerate().map(|(i, o)| clause(o, i == 0)).collect();
        sentences.push(format!("{}.", clauses.join(" and ")));
        rest = tail;
    }
    sentences.join(" ")
}

impl SynthWorld {
    pub fn generate(options: SynthOptions) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let vocab: Vec<String> = SYNTH_VOCABULARY.iter().map(|s| s.to_string()).collect();
        let mut images = Vec::with_capacity(options.images);
        for i in 0..options.images {
            let image_id = format!("synth-{i:04}");
            let n_present = rng.gen_range(3..=6);
            let present: Vec<String> = vocab.choose_multiple(&mut rng, n_present).cloned().collect();
            let absent: Vec<String> = vocab.iter().filter(|o| !present.contains(o)).cloned().collect();

            let n_mentioned = rng.gen_range(1..=present.len());
            let mut mentioned: Vec<String> = present.choose_multiple(&mut rng, n_mentioned).cloned().collect();
            let n_hallucinated = rng.gen_range(0..=options.max_hallucinations.min(absent.len()));
            let hallucinated: Vec<String> = absent.choose_multiple(&mut rng, n_hallucinated).cloned().collect();
            mentioned.extend(hallucinated.iter().cloned());
            mentioned.shuffle(&mut rng);

            let mut tag_pool = Vec::new();
            for o in &present {
                let score = if rng.gen_bool(0.8) { rng.gen_range(0.40..0.99) } else { rng.gen_range(0.05..0.30) };
                tag_pool.push((o.clone(), (score * 100.0f64).round() / 100.0));
            }
            for o in absent.choose_multiple(&mut rng, 2) {
                tag_pool.push((o.clone(), (rng.gen_range(0.0..0.30f64) * 100.0).round() / 100.0));
            }
            tag_pool.shuffle(&mut rng);
            let object_captions: BTreeMap<String, String> = tag_pool
                .iter()
                .filter(|(_, s)| *s >= DEFAULT_ALPHA)
                .map(|(t, _)| (t.clone(), format!("The {t} is clearly visible")))
                .collect();

            images.push(SynthImage {
                scenario: FixtureScenario {
                    image_id,
                    present_objects: present.into_iter().collect(),
                    tag_pool,
                    object_captions,
                    vqa_error_rate: 0.0,
                    seed: options.seed,
                },
                caption: caption_for(&mentioned, &mut rng),
                hallucinated: hallucinated.into_iter().collect(),
            });
        }
        Self { options, images }
    }

    pub fn scenarios(&self) -> Vec<FixtureScenario> {
        self.images.iter().map(|i| i.scenario.clone()).collect()
    }

    pub fn noisy_scenarios(&self) -> Vec<FixtureScenario> {
        self.images
            .iter()
            .map(|i| FixtureScenario { vqa_error_rate: self.options.verifier_a_error_rate, ..i.scenario.clone() })
            .collect()
    }

    pub fn lexicon(&self) -> Vec<String> {
        SYNTH_VOCABULARY.iter().map(|s| s.to_string()).collect()
    }

    pub fn textgen_script(&self) -> TextGenScript {
        TextGenScript::Simulated { lexicon: self.lexicon() }
    }

    pub fn manifest(&self) -> Manifest {
        let entries = self
            .images
            .iter()
            .map(|i| ManifestEntry {
                image_id: i.scenario.image_id.clone(),
                image_path: None,
                caption: i.caption.clone(),
                source_model: Some("synthetic".into()),
            })
            .collect();
        Manifest::new(PathBuf::new(), entries).expect("synthetic image ids are unique")
    }

    pub fn ground_truth(&self) -> GroundTruthCorpus {
        GroundTruthCorpus {
            images: self
                .images
                .iter()
                .map(|i| GroundTruthImage {
                    image_id: i.scenario.image_id.clone(),
                    objects: i.scenario.present_objects.clone(),
                })
                .collect(),
            stats: None,
        }
    }

    /// Config JSON wiring three verifiers, a simulated text model and the
    /// scene fixtures, with file names relative to the config.
    pub fn config_json(&self) -> serde_json::Value {
        let verifier_a_scenes = if self.options.verifier_a_error_rate > 0.0 { "scenes-a.json" } else { "scenes.json" };
        let fixture = |id: &str, role: &str, address: &str| serde_json::json!({"id": id, "role": role, "transport": "fixture", "address": address});
        serde_json::json!({
            "backends": [
                fixture("verifier-a", "binary_vqa", verifier_a_scenes),
                fixture("verifier-b", "binary_vqa", "scenes.json"),
                fixture("tie-breaker", "binary_vqa", "scenes.json"),
                fixture("llm", "text_gen", "textgen.json"),
                fixture("tagger", "tagger", "scenes.json"),
                fixture("detector", "detector", "scenes.json"),
                fixture("captioner", "captioner", "scenes.json"),
            ],
            "mode": "full",
            "seed": self.options.seed,
            "parallelism": 1,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<SynthFiles> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            config: dir.join("config.json"),
            manifest: dir.join("manifest.jsonl"),
            ground_truth: dir.join("ground_truth.json"),
            scenes: dir.join("scenes.json"),
            textgen: dir.join("textgen.json"),
        };
        json(&files.scenes, &self.scenarios())?;
        if self.options.verifier_a_error_rate > 0.0 {
            json(&dir.join("scenes-a.json"), &self.noisy_scenarios())?;
        }
        json(&files.textgen, &self.textgen_script())?;
        json(&files.ground_truth, &self.ground_truth())?;
        json(&files.config, &self.config_json())?;
        self.manifest().write(&files.manifest).map_err(std::io::Error::other)?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let a = SynthWorld::generate(SynthOptions { images: 20, ..Default::default() });
        let b = SynthWorld::generate(SynthOptions { images: 20, ..Default::default() });
        assert_eq!(a, b);
        let c = SynthWorld::generate(SynthOptions { images: 20, seed: 1, ..Default::default() });
        assert_ne!(a, c);
    }

    #[test]
    fn scenes_are_well_formed() {
        let world = SynthWorld::generate(SynthOptions { images: 100, ..Default::default() });
        for img in &world.images {
            let s = &img.scenario;
            assert!(s.issues().is_empty(), "{:?}", s.issues());
            for (tag, score) in &s.tag_pool {
                if !s.present_objects.contains(tag) {
                    assert!(*score < DEFAULT_ALPHA);
                }
            }
            assert!(img.hallucinated.is_disjoint(&s.present_objects));
            assert!(!img.caption.is_empty());
        }
        assert!(world.images.iter().any(|i| !i.hallucinated.is_empty()));
    }

    #[test]
    fn writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let world = SynthWorld::generate(SynthOptions { images: 5, verifier_a_error_rate: 0.2, ..Default::default() });
        let files = world.write(dir.path()).unwrap();
        let cfg = crate::pipeline::PipelineConfig::load(&files.config).unwrap();
        cfg.validate().unwrap();
        assert_eq!(Manifest::load(&files.manifest).unwrap().entries.len(), 5);
        assert_eq!(GroundTruthCorpus::load(&files.ground_truth).unwrap().images.len(), 5);
        assert!(dir.path().join("scenes-a.json").is_file());
    }
}
