//! The thirteen acceptance criteria, one test each. Every test prints a
//! single `criterion NN ...: PASS|FAIL` line before asserting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lase::corpus::{generate_synthetic, Corpus, SynthConfig};
use lase::diarization::{
    adjusted_rand_index, agglomerative_cluster, build_benchmark, rttm_read, rttm_write, run_diar_eval, DiarReport,
};
use lase::encoder::{Encoder, OneHotVoice, PassThrough, Trained};
use lase::gap::{bootstrap_ci, embed_corpus, gap_report, GapReport, GapSettings, GapSummary};
use lase::model::{classify_language, embed_batch, grl_forward, ModelConfig, ModelParams, CLASSIFIER_PARAMS, HEAD_PARAMS};
use lase::numerics::{rng::streams, Graph, Rng, Tensor};
use lase::objective::{lambda_at, language_ce, supcon_loss, LossConfig};
use lase::trainer::{train, StepRecord, TrainConfig};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {n:02} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_lase"))
        .arg("grad-check")
        .output()
        .expect("run lase grad-check");
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let err = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max relative error "))
        .and_then(|v| v.trim().parse::<f64>().ok());
    let ok = out.status.code() == Some(0) && err.is_some_and(|e| e < 1e-4) && elapsed < Duration::from_secs(30);
    verdict(
        1,
        "gradient correctness",
        ok,
        &format!("max rel err {err:?}, exit {:?}, {:.1} s", out.status.code(), elapsed.as_secs_f64()),
    );
    assert!(ok, "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
}

// ---------------------------------------------------------------- 2

struct GrlCase {
    forward_exact: bool,
    z_grad_exact: bool,
    head_max_rel: f64,
    head_exact: bool,
    classifier_exact: bool,
}

/// Gradients of `L_lang` with and without reversal on the same inputs.
fn grl_case(params: &ModelParams, config: &ModelConfig, x: &Tensor, langs: &[usize], lambda: f64) -> GrlCase {
    let run = |reverse: bool| {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let xv = g.constant(x.clone());
        let z = embed_batch(&mut g, &vars, config, xv, None).unwrap();
        let r = if reverse { grl_forward(&mut g, z, lambda).unwrap() } else { z };
        let logits = classify_language(&mut g, &vars, config, r).unwrap();
        let ce = language_ce(&mut g, logits, langs).unwrap();
        g.backward(ce).unwrap();
        let same = g.value(r).data().iter().zip(g.value(z).data()).all(|(a, b)| a.to_bits() == b.to_bits());
        (same, g.grad(z), vars.grads(&g))
    };
    let (forward_exact, gz_rev, p_rev) = run(true);
    let (_, gz_id, p_id) = run(false);
    let scaled = |t: &Tensor| t.data().iter().map(|v| v * -lambda).collect::<Vec<_>>();
    // Value equality: a masked ReLU can yield -0.0 on one side and +0.0 on
    // the other, which are the same number.
    let equal = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x == y);
    let z_grad_exact = equal(gz_rev.data(), &scaled(&gz_id));
    let mut head_exact = true;
    let mut head_max_rel = 0.0f64;
    for i in HEAD_PARAMS {
        let want = scaled(&p_id[i]);
        head_exact &= equal(p_rev[i].data(), &want);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (a, b) in p_rev[i].data().iter().zip(&want) {
            head_max_rel = head_max_rel.max((a - b).abs() / scale);
        }
    }
    let classifier_exact = CLASSIFIER_PARAMS.into_iter().all(|i| equal(p_rev[i].data(), p_id[i].data()));
    GrlCase {
        forward_exact,
        z_grad_exact,
        head_max_rel,
        head_exact,
        classifier_exact,
    }
}

#[test]
fn criterion_02_grl_contract() {
    let config = ModelConfig {
        input_dim: 8,
        hidden_dim: 16,
        embed_dim: 8,
        classifier_hidden: 8,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let mut rng = Rng::new(2);
    let (mut forward, mut z_grad, mut classifier, mut pow2_head) = (0, 0, 0, 0);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let params = ModelParams::init(&config, &mut rng).unwrap();
        let x = Tensor::new(vec![6, 8], (0..48).map(|_| rng.normal()).collect()).unwrap();
        let langs: Vec<usize> = (0..6).map(|_| rng.range_inclusive(0, 3)).collect();
        let lambda = 1.0 - rng.uniform();
        let c = grl_case(&params, &config, &x, &langs, lambda);
        forward += c.forward_exact as usize;
        z_grad += c.z_grad_exact as usize;
        classifier += c.classifier_exact as usize;
        worst = worst.max(c.head_max_rel);
        // Scaling by a power of two is exact, so the head gradient must then
        // match bit for bit all the way down.
        let p2 = grl_case(&params, &config, &x, &langs, (-(1 + case % 10) as f64).exp2());
        pow2_head += (p2.forward_exact && p2.z_grad_exact && p2.head_exact) as usize;
    }
    let ok = forward == 100 && z_grad == 100 && classifier == 100 && pow2_head == 100 && worst <= 1e-12;
    verdict(
        2,
        "GRL contract",
        ok,
        &format!(
            "forward exact {forward}/100, reversed gradient at z exact {z_grad}/100, classifier untouched {classifier}/100, \
             head exact for power-of-two λ {pow2_head}/100, head max rel dev for uniform λ {worst:.1e}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_loss_anchors() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::zeros(&[5, 4]));
    let ce = language_ce(&mut g, logits, &[0, 1, 2, 3, 1]).unwrap();
    let ce = g.value(ce).item();
    let z = g.constant(Tensor::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap());
    let spk = supcon_loss(&mut g, z, &[7, 7], 0.07).unwrap().loss;
    let spk = g.value(spk).item();
    let ok = (ce - 4f64.ln()).abs() < 1e-12 && spk.abs() < 1e-12;
    verdict(3, "loss anchors", ok, &format!("ce {ce:.15}, supcon {spk:e}"));
    assert!(ok);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_lambda_schedule() {
    let cfg = LossConfig::default();
    let steps = [0, 199, 200, 450, 699, 700, 1000];
    let want = [0.0, 0.0, 0.0, 0.05, 0.1 * 499.0 / 500.0, 0.1, 0.1];
    let got: Vec<f64> = steps.iter().map(|&s| lambda_at(s, &cfg)).collect();
    let ok = got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12);
    verdict(4, "lambda schedule", ok, &format!("{got:?}"));
    assert!(ok);
}

// ---------------------------------------------------------------- 5

fn row_from_medians(name: &str, w: f64, c: f64, f: f64) -> (GapSummary, String) {
    let s = GapSummary::from_medians(w, c, f);
    let r = GapReport {
        encoder_name: name.into(),
        within: s.within,
        cross: s.cross,
        floor: s.floor,
        delta: s.delta,
        margin: s.margin,
        ci_delta: [s.delta; 2],
        ci_margin: [s.margin; 2],
        n_pairs_per_bucket: 0,
        buckets: Default::default(),
        bootstrap_iterations: 0,
        level: 0.95,
        seed: 0,
    };
    (s, r.table_row())
}

#[test]
fn criterion_05_table_arithmetic() {
    let (a, row_a) = row_from_medians("baseline", 0.927, 0.845, 0.600);
    let (b, row_b) = row_from_medians("other", 0.757, 0.745, 0.083);
    let ok = (a.delta - 0.082).abs() < 1e-12
        && (a.margin - 0.245).abs() < 1e-12
        && (b.delta - 0.012).abs() < 1e-12
        && (b.margin - 0.662).abs() < 1e-12
        && row_a == "baseline  0.927  0.845  0.600  0.082 [0.082,0.082]  0.245"
        && row_b == "other  0.757  0.745  0.083  0.012 [0.012,0.012]  0.662";
    verdict(5, "table arithmetic", ok, &format!("`{row_a}` / `{row_b}`"));
    assert!(ok);
}

// ---------------------------------------------------------------- 6, 7, 8, 11

struct DeskRun {
    corpus: Corpus,
    history: Vec<StepRecord>,
    trained: GapReport,
    passthrough: GapReport,
    diar_trained: DiarReport,
    diar_passthrough: DiarReport,
    elapsed: Duration,
}

fn desk_corpus() -> Corpus {
    generate_synthetic(&SynthConfig {
        seed: 1337,
        num_voices: 8,
        clips_per_voice_per_lang: 20,
        feature_dim: 32,
        speaker_scale: 1.0,
        language_scale: 0.5,
        noise_scale: 0.1,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let corpus = desk_corpus();
        let config = TrainConfig {
            model: ModelConfig {
                input_dim: 32,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let state = train(&corpus, &config).unwrap();
        let lase = Trained {
            name: "lase".into(),
            params: state.params,
            config: config.model,
        };
        let settings = GapSettings::default();
        let report = |e: &dyn Encoder| gap_report(e.name(), &embed_corpus(&corpus, e).unwrap(), &settings).unwrap();
        let trained = report(&lase);
        let passthrough = report(&PassThrough);
        let elapsed = start.elapsed();
        let diar = |e: &dyn Encoder| {
            run_diar_eval(&corpus, e, 50, &mut Rng::with_stream(1337, streams::DIAR)).unwrap()
        };
        let diar_trained = diar(&lase);
        let diar_passthrough = diar(&PassThrough);
        DeskRun {
            corpus,
            history: state.history,
            trained,
            passthrough,
            diar_trained,
            diar_passthrough,
            elapsed,
        }
    })
}

#[test]
fn criterion_06_gap_closure() {
    let r = desk_run();
    let (t, p) = (&r.trained, &r.passthrough);
    let ok = t.delta <= 0.5 * p.delta && t.margin >= p.margin && r.elapsed < Duration::from_secs(300);
    verdict(
        6,
        "gap closure",
        ok,
        &format!(
            "Δ trained {:.4} vs bound {:.4}, M trained {:.4} vs pass-through {:.4}, {:.1} s",
            t.delta,
            0.5 * p.delta,
            t.margin,
            p.margin,
            r.elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_adversarial_equilibrium() {
    let h = &desk_run().history;
    let mean = |s: &[StepRecord], f: fn(&StepRecord) -> f64| s.iter().map(f).sum::<f64>() / s.len() as f64;
    let tail = &h[h.len() - 100..];
    let lang = mean(tail, |r| r.l_lang);
    let spk_last = mean(tail, |r| r.l_spk);
    let spk_first = mean(&h[..10], |r| r.l_spk);
    let ok = (1.2..=1.6).contains(&lang) && spk_last < spk_first;
    verdict(
        7,
        "adversarial equilibrium",
        ok,
        &format!("L_lang last-100 {lang:.4}, L_spk first-10 {spk_first:.5} → last-100 {spk_last:.5}"),
    );
    assert!(ok);
}

#[test]
fn criterion_08_bootstrap_sanity() {
    let a = vec![0.9; 50];
    let b = vec![0.4; 70];
    let ci = bootstrap_ci(&a, &b, 500, 0.95, &mut Rng::new(8)).unwrap();
    let constant_ok = ci == [0.9 - 0.4; 2];
    let r = desk_run();
    let trained_ok = r.trained.ci_delta[0] <= 0.02;
    let baseline_ok = r.passthrough.ci_delta[0] > 0.05;
    let ok = constant_ok && trained_ok && baseline_ok;
    verdict(
        8,
        "bootstrap sanity",
        ok,
        &format!(
            "constant CI {ci:?}; trained Δ CI [{:.4}, {:.4}] (needs a value ≤ 0.02); pass-through Δ CI [{:.4}, {:.4}] (lower > 0.05)",
            r.trained.ci_delta[0], r.trained.ci_delta[1], r.passthrough.ci_delta[0], r.passthrough.ci_delta[1]
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_11_diarisation_sanity() {
    let r = desk_run();
    let oracle = OneHotVoice::new(r.corpus.voices());
    let o = run_diar_eval(&r.corpus, &oracle, 50, &mut Rng::with_stream(1337, streams::DIAR)).unwrap();
    let ok = o.ari_mean == 1.0
        && o.cs_recall == 1.0
        && !o.cs_recall_vacuous
        && r.diar_trained.cs_recall >= r.diar_passthrough.cs_recall;
    verdict(
        11,
        "diarisation sanity",
        ok,
        &format!(
            "oracle ARI {:.3} cs_recall {:.3}; trained cs_recall {:.3} vs pass-through {:.3}",
            o.ari_mean, o.cs_recall, r.diar_trained.cs_recall, r.diar_passthrough.cs_recall
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 9

fn brute_force_average_linkage(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += dist(&points[i], &points[j]);
                    }
                }
                let link = total / (clusters[a].len() * clusters[b].len()) as f64;
                if link < best.0 {
                    best = (link, a, b);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
    let mut labels = vec![0; points.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            labels[m] = c;
        }
    }
    labels
}

/// Relabels by order of first appearance so partitions compare directly.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[test]
fn criterion_09_clustering_oracle() {
    let mut rng = Rng::new(9);
    let mut matched = 0;
    for _ in 0..200 {
        let n = rng.range_inclusive(1, 10);
        let k = rng.range_inclusive(1, n);
        let d = rng.range_inclusive(2, 5);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
        let got = agglomerative_cluster(&pts, k).unwrap();
        if canonical(&got) == canonical(&brute_force_average_linkage(&pts, k)) {
            matched += 1;
        }
    }
    let ok = matched == 200;
    verdict(9, "clustering oracle", ok, &format!("{matched}/200 instances identical"));
    assert!(ok);
}

// ---------------------------------------------------------------- 10

/// ARI from pair counts over all `i < j`.
fn pair_count_ari(p: &[usize], t: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            match (p[i] == p[j], t[i] == t[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let den = (a + b) * (b + d) + (a + c) * (c + d);
    if den == 0.0 {
        1.0
    } else {
        2.0 * (a * d - b * c) / den
    }
}

#[test]
fn criterion_10_ari_oracle() {
    let mut rng = Rng::new(10);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.range_inclusive(2, 12);
        let kp = rng.range_inclusive(1, n.min(5));
        let kt = rng.range_inclusive(1, n.min(5));
        let p: Vec<usize> = (0..n).map(|_| rng.range_inclusive(0, kp - 1)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.range_inclusive(0, kt - 1)).collect();
        worst = worst.max((adjusted_rand_index(&p, &t).unwrap() - pair_count_ari(&p, &t)).abs());
    }
    let hand = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
    let ok = worst <= 1e-12 && hand == -0.5;
    verdict(10, "ARI oracle", ok, &format!("max deviation {worst:e}, hand case {hand}"));
    assert!(ok);
}

// ---------------------------------------------------------------- 12

fn run_pipeline(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_lase");
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let steps: [Vec<String>; 5] = [
        vec!["gen-synth".into(), "--out".into(), p("corpus.jsonl"), "--seed".into(), "1337".into(),
             "--feature-dim".into(), "32".into(), "--clips-per-lang".into(), "20".into()],
        vec!["gate".into(), "--corpus".into(), p("corpus.jsonl"), "--out".into(), p("gate")],
        vec!["train".into(), "--corpus".into(), p("gate/gated.jsonl"), "--out".into(), p("train"),
             "--seed".into(), "1337".into()],
        vec!["eval-gap".into(), "--corpus".into(), p("gate/gated.jsonl"), "--checkpoint".into(),
             p("train/checkpoint.bin"), "--out".into(), p("gap"), "--seed".into(), "1337".into()],
        vec!["diar".into(), "--corpus".into(), p("gate/gated.jsonl"), "--checkpoint".into(),
             p("train/checkpoint.bin"), "--out".into(), p("diar"), "--seed".into(), "1337".into()],
    ];
    for args in steps {
        let out = Command::new(bin).args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_12_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = run_pipeline(a.path());
    let fb = run_pipeline(b.path());
    let names: Vec<_> = fa.iter().map(|(p, _)| p.clone()).collect();
    let reports = names
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "txt" || e == "json"))
        .count();
    let differing: Vec<_> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let ok = fa.len() == fb.len() && differing.is_empty() && reports >= 4;
    verdict(
        12,
        "determinism",
        ok,
        &format!("{} files compared ({reports} reports), differing: {differing:?}", fa.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 13

#[test]
fn criterion_13_rttm_round_trip() {
    let corpus = generate_synthetic(&SynthConfig {
        feature_dim: 32,
        clips_per_voice_per_lang: 20,
        ..SynthConfig::default()
    })
    .unwrap();
    let convs = build_benchmark(&corpus, 50, &mut Rng::with_stream(1337, streams::DIAR)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (mut checked, mut mismatched) = (0, 0);
    for c in &convs {
        let path = dir.path().join(format!("{}.rttm", c.id));
        rttm_write(std::slice::from_ref(c), &path).unwrap();
        let turns = rttm_read(&path).unwrap();
        if turns.len() != c.segments.len() {
            mismatched += c.segments.len().abs_diff(turns.len());
        }
        for (s, t) in c.segments.iter().zip(&turns) {
            let want = (&s.conversation_id, format!("{:.3}", s.onset_s), format!("{:.3}", s.duration_s), &s.voice);
            let got = (&t.conversation_id, format!("{:.3}", t.onset_s), format!("{:.3}", t.duration_s), &t.speaker);
            checked += 1;
            mismatched += (want != got) as usize;
        }
    }
    let ok = convs.len() == 50 && mismatched == 0 && checked > 0;
    verdict(
        13,
        "RTTM round trip",
        ok,
        &format!("{} conversations, {checked} turns, {mismatched} mismatches", convs.len()),
    );
    assert!(ok);
}
