//! Acceptance suite: one test per release criterion, each printing a
//! single `acceptance N (<name>): PASS|FAIL` line (visible under
//! `cargo test -- --nocapture`). Every expected value here is derived
//! independently of the code under test: by hand arithmetic, brute-force
//! 64-bit re-computation, or byte comparison against committed goldens.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{fixtures_dir, shipped_catalog_dir, FixtureServer, ServerOptions};
use cupl::ablation::{self, SweepContext};
use cupl::catalog::{load_catalog, Metric, PromptMode};
use cupl::embedding::{
    save_embedding_file, EmbeddingError, EmbeddingStore, EmbeddingVector, HashEmbedder,
    TextEmbedder,
};
use cupl::eval::{self, DatasetManifest};
use cupl::factory::{
    clean_completion, generate_prompt_set, meta_path, save_store, GenerateOptions,
    ImagePromptSet, Provenance,
};
use cupl::llm::{GenerationConfig, LlmClient};
use cupl::zeroshot::{
    build_prototype, build_prototype_set, classify, classify_all, ensemble_prototype_sets,
    PrototypeOptions,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs one criterion body and prints its verdict line.
fn criterion(number: u8, name: &str, body: impl FnOnce()) {
    let result = catch_unwind(AssertUnwindSafe(body));
    match result {
        Ok(()) => println!("acceptance {number} ({name}): PASS"),
        Err(cause) => {
            println!("acceptance {number} ({name}): FAIL");
            resume_unwind(cause);
        }
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let components: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0f32)).collect();
        if components.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>() > 1e-6 {
            return EmbeddingVector::new(components).unwrap();
        }
    }
}

fn max_component_diff(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.components()
        .iter()
        .zip(b.components())
        .map(|(&x, &y)| ((x as f64) - (y as f64)).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------
// 1. Catalog accounting
// ---------------------------------------------------------------------

#[test]
fn acceptance_1_catalog_accounting() {
    criterion(1, "catalog accounting", || {
        let started = Instant::now();
        let catalog = load_catalog(&shipped_catalog_dir()).unwrap();
        let single = catalog.count_templates(PromptMode::CuplSingle).unwrap();
        let full = catalog.count_templates(PromptMode::CuplFull).unwrap();
        let standard = catalog.count_templates(PromptMode::Standard).unwrap();

        assert_eq!((standard.total, standard.unique), (136, 97));
        assert_eq!((full.total, full.unique), (33, 25));
        assert_eq!((single.total, single.unique), (8, 1));

        // Hand-written template counts per dataset: standard / full / single.
        let expected = [
            ("imagenet", 80, 5, 1),
            ("dtd", 8, 6, 1),
            ("stanford_cars", 8, 9, 1),
            ("sun397", 2, 3, 1),
            ("food101", 1, 3, 1),
            ("fgvc_aircraft", 2, 2, 1),
            ("oxford_pets", 1, 2, 1),
            ("caltech101", 34, 3, 1),
        ];
        assert_eq!(catalog.dataset_ids().count(), expected.len());
        for (id, n_standard, n_full, n_single) in expected {
            assert_eq!(standard.per_dataset[id], n_standard, "{id} standard");
            assert_eq!(full.per_dataset[id], n_full, "{id} full");
            assert_eq!(single.per_dataset[id], n_single, "{id} single");
        }

        assert!(started.elapsed() < Duration::from_secs(1), "took {:?}", started.elapsed());
    });
}

// ---------------------------------------------------------------------
// 2. Prototype math properties
// ---------------------------------------------------------------------

#[test]
fn acceptance_2_prototype_math_properties() {
    criterion(2, "prototype math properties", || {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let options = PrototypeOptions { prenormalize: true };

        for case in 0..1000 {
            let dim = rng.gen_range(2..=32);
            let count = rng.gen_range(1..=16);
            let vectors: Vec<EmbeddingVector> =
                (0..count).map(|_| random_vector(&mut rng, dim)).collect();

            let prototype = match build_prototype(&vectors, &options) {
                Ok(p) => p,
                // Random means can cancel to zero; that is a legitimate
                // rejection, not a property failure.
                Err(cupl::zeroshot::ZeroshotError::Embedding(
                    EmbeddingError::ZeroVector { .. },
                )) => continue,
                Err(other) => panic!("case {case}: unexpected error {other}"),
            };

            // Unit norm within 1e-6.
            assert!(
                (prototype.norm() - 1.0).abs() < 1e-6,
                "case {case}: prototype norm {}",
                prototype.norm()
            );

            // Permutation invariance of sentence order.
            let mut shuffled = vectors.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let permuted = build_prototype(&shuffled, &options).unwrap();
            assert!(
                max_component_diff(&prototype, &permuted) < 1e-6,
                "case {case}: permutation changed the prototype"
            );

            // Positive-scale invariance of the inputs.
            let scaled: Vec<EmbeddingVector> = vectors
                .iter()
                .map(|v| {
                    let scale = rng.gen_range(0.05f32..20.0f32);
                    EmbeddingVector::new(
                        v.components().iter().map(|&c| c * scale).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let rescaled = build_prototype(&scaled, &options).unwrap();
            assert!(
                max_component_diff(&prototype, &rescaled) < 1e-6,
                "case {case}: positive scaling changed the prototype"
            );

            // Idempotent normalization: a prototype is its own prototype.
            let renormalized =
                build_prototype(std::slice::from_ref(&prototype), &options).unwrap();
            assert!(
                max_component_diff(&prototype, &renormalized) < 1e-6,
                "case {case}: renormalizing moved the prototype"
            );
        }

        assert!(started.elapsed() < Duration::from_secs(5), "took {:?}", started.elapsed());
    });
}

// ---------------------------------------------------------------------
// 3. Classification vs brute-force oracle
// ---------------------------------------------------------------------

/// Test-only embedder mapping fixed sentence strings to fixed vectors.
struct MapEmbedder(HashMap<String, EmbeddingVector>);

impl TextEmbedder for MapEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.0[t].clone()).collect())
    }
}

/// Independent argmax oracle: normalize the image in 64-bit arithmetic
/// (rounding back to f32 as the library contract requires), score every
/// prototype with a sequential f64 dot product, break ties toward the
/// lowest index.
fn oracle_argmax(image: &[f32], prototypes: &[Vec<f32>]) -> usize {
    let norm: f64 = image.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    let unit: Vec<f32> = image.iter().map(|&c| ((c as f64) / norm) as f32).collect();
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (index, prototype) in prototypes.iter().enumerate() {
        let mut score = 0f64;
        for (&u, &p) in unit.iter().zip(prototype) {
            score += (u as f64) * (p as f64);
        }
        if score > best_score {
            best = index;
            best_score = score;
        }
    }
    best
}

#[test]
fn acceptance_3_classification_matches_oracle() {
    criterion(3, "classification vs 64-bit oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 8;
        let num_classes = 5;

        for instance in 0..100 {
            // One sentence per class so each prototype is a controlled
            // direction.
            let mut sentences = HashMap::new();
            let mut store = ImagePromptSet::new("oracle", PromptMode::Standard);
            let mut class_vectors: Vec<EmbeddingVector> = Vec::new();
            for class in 0..num_classes {
                let mut vector = random_vector(&mut rng, dim);
                // Every third instance forces an exact tie: classes 1 and 3
                // share one direction, so equal scores must resolve to
                // index 1.
                if instance % 3 == 0 && class == 3 {
                    vector = class_vectors[1].clone();
                }
                let text = format!("sentence for class {class}");
                sentences.insert(text.clone(), vector.clone());
                class_vectors.push(vector);
                store.insert_class(
                    format!("class-{class}"),
                    vec![text],
                    vec![Provenance { template_index: 0, completion_index: 0 }],
                );
            }
            let backend = MapEmbedder(sentences);
            let prototypes =
                build_prototype_set(&store, &backend, &PrototypeOptions::default()).unwrap();
            let prototype_components: Vec<Vec<f32>> = (0..num_classes)
                .map(|c| prototypes.prototype_at(c).unwrap().1.components().to_vec())
                .collect();

            for image_index in 0..4 {
                // On tie instances, aim the first image exactly along the
                // duplicated prototype so the tie sits at the top.
                let image = if instance % 3 == 0 && image_index == 0 {
                    EmbeddingVector::new(prototype_components[1].clone()).unwrap()
                } else {
                    random_vector(&mut rng, dim)
                };
                let expected = oracle_argmax(image.components(), &prototype_components);
                let prediction = classify("img", &image, &prototypes).unwrap();
                assert_eq!(
                    prediction.predicted_index, expected,
                    "instance {instance}, image {image_index}"
                );
                if instance % 3 == 0 && image_index == 0 {
                    assert_eq!(prediction.predicted_index, 1, "tie must break low");
                    assert_eq!(prediction.scores[1], prediction.scores[3]);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------
// 4. Ensemble identity and counterexample
// ---------------------------------------------------------------------

#[test]
fn acceptance_4_ensemble_identity() {
    criterion(4, "ensemble pools sentences", || {
        let labels = ["ambulance", "banjo", "goldfish"];
        let mut set_a = ImagePromptSet::new("demo", PromptMode::Standard);
        let mut set_b = ImagePromptSet::new("demo", PromptMode::Standard);
        for (i, label) in labels.iter().enumerate() {
            // Unequal sentence counts per side make the counterexample
            // meaningful: 3 sentences in A vs 1 in B.
            let a_texts: Vec<String> =
                (0..3).map(|j| format!("a-sentence {i} {j} about {label}")).collect();
            let provenance_a =
                (0..3).map(|_| Provenance { template_index: 0, completion_index: 0 }).collect();
            set_a.insert_class(label.to_string(), a_texts, provenance_a);
            set_b.insert_class(
                label.to_string(),
                vec![format!("b-sentence {i} about {label}")],
                vec![Provenance { template_index: 0, completion_index: 0 }],
            );
        }
        let backend = HashEmbedder::new(32, 3);
        let options = PrototypeOptions { prenormalize: true };

        let fused = ensemble_prototype_sets(&set_a, &set_b, &backend, &options).unwrap();
        let concatenated =
            build_prototype_set(&set_a.concat(&set_b).unwrap(), &backend, &options).unwrap();

        for label in labels {
            // Bit-for-bit equality after 32-bit rounding.
            assert_eq!(
                fused.prototype(label).unwrap(),
                concatenated.prototype(label).unwrap(),
                "{label}: ensemble differs from pooled rebuild"
            );
            assert_eq!(fused.source_count(label), Some(4));

            // Counterexample: the renormalized mean of the two per-set
            // prototypes weights B's lone sentence 3x too heavily, so it
            // must NOT match the pooled prototype.
            let proto_a = build_prototype_set(&set_a, &backend, &options).unwrap();
            let proto_b = build_prototype_set(&set_b, &backend, &options).unwrap();
            let mean_of_prototypes = build_prototype(
                &[
                    proto_a.prototype(label).unwrap().clone(),
                    proto_b.prototype(label).unwrap().clone(),
                ],
                &options,
            )
            .unwrap();
            assert!(
                max_component_diff(&mean_of_prototypes, fused.prototype(label).unwrap()) > 1e-6,
                "{label}: mean-of-prototypes unexpectedly equals the pooled mean"
            );
        }
    });
}

// ---------------------------------------------------------------------
// 5. Metric suite
// ---------------------------------------------------------------------

#[test]
fn acceptance_5_metric_suite() {
    criterion(5, "metric definitions and assignment", || {
        // Crafted imbalance: class 0 has five correct items, class 1 has
        // one wrong item. Top-1 = 5/6 = 83.33%; per-class = (100, 0),
        // mean-per-class = 50.00%.
        let pairs: Vec<(usize, usize)> = vec![
            (0, 0),
            (0, 0),
            (0, 0),
            (0, 0),
            (0, 0),
            (0, 1), // the lone class-1 item, predicted as class 0
        ];
        let top1 = eval::top1_accuracy(&pairs);
        let (per_class, mean) = eval::per_class_accuracy(&pairs, 2);
        assert!((top1 - 500.0 / 6.0).abs() < 1e-6, "top1 {top1}");
        assert!((per_class[0] - 100.0).abs() < 1e-9);
        assert!(per_class[1].abs() < 1e-9);
        assert!((mean - 50.0).abs() < 1e-6, "mean per class {mean}");

        // Balanced manifests: the two metrics agree within 1e-9.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let num_classes = rng.gen_range(2..=6);
            let per_class_items = rng.gen_range(1..=8);
            let mut pairs = Vec::new();
            for truth in 0..num_classes {
                for _ in 0..per_class_items {
                    pairs.push((rng.gen_range(0..num_classes), truth));
                }
            }
            let top1 = eval::top1_accuracy(&pairs);
            let (_, mean) = eval::per_class_accuracy(&pairs, num_classes);
            assert!(
                (top1 - mean).abs() < 1e-9,
                "balanced manifest: top1 {top1} != mean-per-class {mean}"
            );
        }

        // Metric assignment across the shipped registry.
        let catalog = load_catalog(&shipped_catalog_dir()).unwrap();
        let expected = [
            ("imagenet", Metric::Top1Accuracy),
            ("dtd", Metric::Top1Accuracy),
            ("stanford_cars", Metric::Top1Accuracy),
            ("sun397", Metric::Top1Accuracy),
            ("food101", Metric::Top1Accuracy),
            ("fgvc_aircraft", Metric::MeanPerClass),
            ("oxford_pets", Metric::MeanPerClass),
            ("caltech101", Metric::MeanPerClass),
        ];
        for (id, metric) in expected {
            assert_eq!(catalog.dataset(id).unwrap().metric, metric, "{id}");
        }
    });
}

// ---------------------------------------------------------------------
// 6. Cleaning fuzz + golden round-trip
// ---------------------------------------------------------------------

#[test]
fn acceptance_6_cleaning_and_golden_store() {
    criterion(6, "completion cleaning", || {
        // Fuzz: any surviving cleaned string is non-empty, newline-free,
        // trimmed, and period-terminated.
        let mut runner = TestRunner::new(ProptestConfig {
            cases: 600,
            ..ProptestConfig::default()
        });
        runner
            .run(&any::<String>(), |raw| {
                if let Some(out) = clean_completion(&raw) {
                    prop_assert!(!out.is_empty());
                    prop_assert!(out.ends_with('.'));
                    prop_assert!(!out.contains('\n'));
                    prop_assert!(!out.contains('\r'));
                    prop_assert_eq!(out.trim(), out.as_str());
                }
                Ok(())
            })
            .unwrap();

        // Whitespace-only input never survives.
        for raw in ["", "   ", "\n\n", " \t \n "] {
            assert_eq!(clean_completion(raw), None, "{raw:?}");
        }

        // The committed raw-completion fixture regenerates into a
        // byte-identical golden store through the full pipeline.
        let server = FixtureServer::start(ServerOptions {
            corpus: common::tench_corpus(),
            synth: false,
            ..Default::default()
        });
        let catalog = load_catalog(&fixtures_dir().join("catalog")).unwrap();
        let dataset = catalog.dataset("tenchnet").unwrap();
        let templates = catalog.templates("tenchnet", PromptMode::CuplFull).unwrap();
        let client = LlmClient::new(server.url(), Some("test-key".into())).unwrap();
        // Must match the config the golden fixture was generated with,
        // since the sampling config is serialized into the store metadata.
        let config = GenerationConfig {
            request_timeout: Duration::from_secs(5),
            max_retries: 2,
            retry_base_delay: Duration::from_millis(1),
            ..GenerationConfig::default()
        };
        let cache = tempfile::tempdir().unwrap();
        let set = generate_prompt_set(
            dataset,
            templates,
            &config,
            &client,
            cache.path(),
            &GenerateOptions::default(),
        )
        .unwrap();
        assert_eq!(set.total_prompts(), 50);

        let out = tempfile::tempdir().unwrap();
        let store_path = out.path().join("tench.json");
        save_store(&set, &store_path).unwrap();
        let golden = fixtures_dir().join("tench_store_golden.json");
        assert_eq!(
            std::fs::read(&store_path).unwrap(),
            std::fs::read(&golden).unwrap(),
            "regenerated store differs from the committed golden bytes"
        );
        assert_eq!(
            std::fs::read(meta_path(&store_path)).unwrap(),
            std::fs::read(meta_path(&golden)).unwrap(),
        );
    });
}

// ---------------------------------------------------------------------
// 7. End-to-end determinism
// ---------------------------------------------------------------------

#[test]
fn acceptance_7_end_to_end_determinism() {
    criterion(7, "pipeline determinism", || {
        let started = Instant::now();
        let server = FixtureServer::start(ServerOptions::default());
        let tmp = tempfile::tempdir().unwrap();
        let catalog_dir = fixtures_dir().join("catalog");
        let cache = tmp.path().join("cache");

        // 50 images over the 5 fixture classes.
        let embedder = HashEmbedder::new(64, 7);
        let mut images = EmbeddingStore::new();
        let mut manifest_csv = String::from("image_key,true_index\n");
        for i in 0..50 {
            let key = format!("image-{i}");
            images.insert(key.clone(), embedder.embed_one(&key)).unwrap();
            manifest_csv.push_str(&format!("{key},{}\n", i % 5));
        }
        let images_path = tmp.path().join("images.jsonl");
        save_embedding_file(&images, &images_path).unwrap();
        let manifest_path = tmp.path().join("manifest.csv");
        std::fs::write(&manifest_path, manifest_csv).unwrap();

        let run_pipeline = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
            let bin = env!("CARGO_BIN_EXE_cupl");
            let store = tmp.path().join(format!("store-{tag}.json"));
            let preds = tmp.path().join(format!("preds-{tag}.csv"));
            let report = tmp.path().join(format!("report-{tag}.json"));
            let output = std::process::Command::new(bin)
                .env("CUPL_API_KEY", "test-key")
                .args([
                    "generate",
                    "--dataset",
                    "fixture5",
                    "--mode",
                    "full",
                    "--out",
                    store.to_str().unwrap(),
                    "--catalog-dir",
                    catalog_dir.to_str().unwrap(),
                    "--cache-dir",
                    cache.to_str().unwrap(),
                    "--llm-url",
                    server.url(),
                ])
                .output()
                .unwrap();
            assert!(
                output.status.success(),
                "generate ({tag}): {}",
                String::from_utf8_lossy(&output.stderr)
            );
            let output = std::process::Command::new(bin)
                .env_remove("CUPL_API_KEY")
                .args([
                    "classify",
                    "--dataset",
                    "fixture5",
                    "--prompts",
                    store.to_str().unwrap(),
                    "--images",
                    images_path.to_str().unwrap(),
                    "--manifest",
                    manifest_path.to_str().unwrap(),
                    "--out",
                    preds.to_str().unwrap(),
                ])
                .output()
                .unwrap();
            assert!(
                output.status.success(),
                "classify ({tag}): {}",
                String::from_utf8_lossy(&output.stderr)
            );
            let output = std::process::Command::new(bin)
                .env_remove("CUPL_API_KEY")
                .args([
                    "eval",
                    "--dataset",
                    "fixture5",
                    "--predictions",
                    preds.to_str().unwrap(),
                    "--manifest",
                    manifest_path.to_str().unwrap(),
                    "--catalog-dir",
                    catalog_dir.to_str().unwrap(),
                    "--report-out",
                    report.to_str().unwrap(),
                ])
                .output()
                .unwrap();
            assert!(
                output.status.success(),
                "eval ({tag}): {}",
                String::from_utf8_lossy(&output.stderr)
            );
            (
                std::fs::read(&store).unwrap(),
                std::fs::read(&preds).unwrap(),
                std::fs::read(&report).unwrap(),
            )
        };

        let first = run_pipeline("one");
        let second = run_pipeline("two");
        assert_eq!(first.0, second.0, "prompt store bytes differ between runs");
        assert_eq!(first.1, second.1, "prediction bytes differ between runs");
        assert_eq!(first.2, second.2, "report bytes differ between runs");

        assert!(
            started.elapsed() < Duration::from_secs(10),
            "took {:?}",
            started.elapsed()
        );
    });
}

// ---------------------------------------------------------------------
// 8. Sweep sanity
// ---------------------------------------------------------------------

#[test]
fn acceptance_8_sweep_sanity() {
    criterion(8, "sweep endpoints", || {
        let catalog = load_catalog(&fixtures_dir().join("catalog")).unwrap();
        let dataset = catalog.dataset("fixture5").unwrap();

        // A synthetic full store: 5 templates x 10 completions per class.
        let mut store = ImagePromptSet::new("fixture5", PromptMode::CuplFull);
        for label in &dataset.class_labels {
            let mut prompts = Vec::new();
            let mut provenance = Vec::new();
            for template_index in 0..5 {
                for completion_index in 0..10 {
                    prompts.push(format!(
                        "A {label}, template {template_index}, completion {completion_index}."
                    ));
                    provenance.push(Provenance { template_index, completion_index });
                }
            }
            store.insert_class(label.clone(), prompts, provenance);
        }

        let backend = HashEmbedder::new(64, 0);
        let image_embedder = HashEmbedder::new(64, 7);
        let mut images = EmbeddingStore::new();
        let mut items = Vec::new();
        for i in 0..20 {
            let key = format!("image-{i}");
            images.insert(key.clone(), image_embedder.embed_one(&key)).unwrap();
            items.push((key, i % 5));
        }
        let manifest = DatasetManifest::new(items);
        let options = PrototypeOptions { prenormalize: true };
        let ctx = SweepContext {
            dataset,
            store: &store,
            backend: &backend,
            images: &images,
            manifest: &manifest,
            options,
        };

        let result = ablation::sweep_image_prompt_count(&ctx, &[1, 2, 5, 10]).unwrap();
        assert_eq!(result.points.len(), 4);

        // Independent full-run reference: prototypes over the whole store.
        let prototypes = build_prototype_set(&store, &backend, &options).unwrap();
        let keyed: Vec<(String, EmbeddingVector)> = manifest
            .items()
            .iter()
            .map(|(k, _)| (k.clone(), images.lookup(k).unwrap().clone()))
            .collect();
        let predictions = classify_all(&keyed, &prototypes).unwrap();
        let report =
            eval::evaluate(&predictions, &manifest, dataset, "full", None).unwrap();

        let last = result.points.last().unwrap();
        assert_eq!(last.axis_value, 10.0);
        assert_eq!(
            last.metric_value, report.metric_value,
            "maximal sweep point must equal the full run exactly"
        );
        assert_eq!(last.total_image_prompts, 50, "5 templates x 10 completions");

        // The same holds on the other axis: keeping all 5 templates is the
        // full run.
        let by_templates = ablation::sweep_llm_prompt_count(&ctx, &[1, 5]).unwrap();
        let last = by_templates.points.last().unwrap();
        assert_eq!(last.metric_value, report.metric_value);
        assert_eq!(last.total_image_prompts, 50);
    });
}
