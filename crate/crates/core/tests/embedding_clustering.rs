use ndarray::Array1;

use diarize_core::cluster::{vbx_refine, SlotLabel, VbxConfig};
use diarize_core::config::PipelineConfig;
use diarize_core::embedding::{CleanMask, EmbedRequest, Embedder, SyntheticEmbedder};
use diarize_core::frames::TimeSpan;
use diarize_core::pipeline::{run, Input, OracleOptions};
use diarize_core::plda::PldaGenerator;
use diarize_core::powerset::PowersetCodec;
use diarize_core::scoring::{chunk_truth, GroundTruthScript};

fn rotating_script(names: &[&str], duration: f64) -> GroundTruthScript {
    let turns = (0..duration as usize)
        .map(|i| (TimeSpan::new(i as f64, i as f64 + 1.0).unwrap(), names[i % names.len()].to_string()))
        .collect();
    GroundTruthScript::new("rot", turns, duration).unwrap()
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
}

#[test]
fn same_speaker_in_two_chunks_is_similar() {
    let cfg = PipelineConfig::default();
    let fr = cfg.frame_rate();
    let script = GroundTruthScript::new("solo", vec![(TimeSpan::new(0.0, 40.0).unwrap(), "A".into())], 40.0).unwrap();
    let g = PldaGenerator::synthetic(256, 128, 100.0, 1).unwrap();
    let emb = SyntheticEmbedder::new(script, PowersetCodec::new(4, 2).unwrap(), fr, 799, g);
    let mask = CleanMask { mask: vec![1.0; 799], fallback_used: false };
    let wave = Array1::<f32>::zeros(256_000);
    let get = |c: usize| {
        emb.embed(&EmbedRequest {
            chunk_index: c,
            local_speaker: 0,
            chunk_start_s: c as f64 * 1.6,
            waveform: wave.view(),
            mask: &mask,
        })
        .unwrap()
        .unwrap()
    };
    let (a, b) = (get(0), get(5));
    assert!(cosine(&a, &b) > 0.95, "{}", cosine(&a, &b));
    assert!((a.dot(&a) - 1.0).abs() < 1e-12);

    // an empty slot gets nothing
    let none = emb
        .embed(&EmbedRequest {
            chunk_index: 0,
            local_speaker: 1,
            chunk_start_s: 0.0,
            waveform: wave.view(),
            mask: &mask,
        })
        .unwrap();
    assert!(none.is_none());
}

#[test]
fn forty_slots_forty_valid_embeddings() {
    let run = run(
        &Input::Script(rotating_script(&["A", "B", "C", "D"], 30.0)),
        &PipelineConfig::default(),
        &OracleOptions::default(),
    )
    .unwrap();
    assert_eq!(run.embeddings.dim(), (10, 4, 256));
    assert_eq!(run.embeddings.num_valid(), 40);
    assert!(run.embeddings.vectors.iter().all(|v| v.is_finite()));
    assert!(run.embeddings.norms().iter().all(|n| (n - 1.0).abs() < 1e-9));
    assert_eq!(run.clustering.assignment.n_clusters, 4);
    assert_eq!(run.num_speakers(), 4);
}

#[test]
fn eight_inactive_slots_four_speakers() {
    let mut turns = vec![(TimeSpan::new(0.0, 2.0).unwrap(), "D".to_string())];
    for i in 0..28 {
        let t = 2.0 + i as f64;
        turns.push((TimeSpan::new(t, t + 1.0).unwrap(), ["A", "B", "C"][i % 3].to_string()));
    }
    let script = GroundTruthScript::new("m", turns, 30.0).unwrap();
    let run = run(&Input::Script(script), &PipelineConfig::default(), &OracleOptions::default()).unwrap();
    let a = &run.clustering.assignment;
    assert_eq!(a.n_clusters, 4);
    assert_eq!(a.num_inactive(), 8);
    assert_eq!(a.to_matrix().iter().filter(|&&v| v == -2).count(), 8);
    // the empty slot of every later chunk is the fourth one
    for c in 2..10 {
        assert_eq!(a.labels[[c, 3]], SlotLabel::Inactive, "chunk {c}");
    }
}

#[test]
fn refinement_keeps_a_correct_init() {
    for seed in 0..3 {
        let g = PldaGenerator::synthetic(256, 128, 100.0, seed).unwrap();
        let samples = g.sample_speakers_and_embeddings(&[10, 10, 10, 10]);
        let units: Vec<_> = samples.iter().map(|s| g.model.project(s.embedding.view()).unwrap()).collect();
        let truth: Vec<usize> = samples.iter().map(|s| s.speaker).collect();
        let state = vbx_refine(&units, g.model.phi().view(), &truth, &VbxConfig::default()).unwrap();
        assert_eq!(state.labels(), truth, "seed {seed}");
    }
}

#[test]
fn reconstruction_matches_script_per_chunk() {
    // speaker A moves from local slot 0 to slot 1 once B opens a chunk
    let script = GroundTruthScript::new(
        "perm",
        vec![
            (TimeSpan::new(0.0, 4.0).unwrap(), "A".into()),
            (TimeSpan::new(4.5, 19.0).unwrap(), "B".into()),
            (TimeSpan::new(19.5, 30.0).unwrap(), "A".into()),
        ],
        30.0,
    )
    .unwrap();
    let cfg = PipelineConfig::default();
    let run = run(&Input::Script(script.clone()), &cfg, &OracleOptions::default()).unwrap();
    let codec = PowersetCodec::new(4, 2).unwrap();
    let fr = cfg.frame_rate();
    let mut global_of = std::collections::BTreeMap::new();
    for c in 0..run.batch.len() {
        let truth = chunk_truth(&script, run.batch.start_s(c), 799, &fr, &codec);
        for (slot, who) in truth.slots.iter().enumerate() {
            if let (Some(who), SlotLabel::Speaker(k)) = (who, run.clustering.assignment.labels[[c, slot]]) {
                let k = *global_of.entry(who.clone()).or_insert(k);
                assert_eq!(run.clustered[c].column(k), truth.activity.column(slot), "chunk {c} speaker {who}");
            }
        }
    }
    assert_eq!(global_of.len(), 2);
}
