use proptest::prelude::*;

use lase::corpus::{generate_synthetic, quality_gate, SynthConfig};
use lase::diarization::{adjusted_rand_index, agglomerative_cluster};
use lase::encoder::PassThrough;
use lase::gap::bootstrap_ci;
use lase::numerics::{Graph, Rng, Tensor};
use lase::objective::supcon_loss;
use lase::optimizer::clip_global_norm;

fn supcon(rows: &[Vec<f64>], voices: &[usize]) -> f64 {
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_rows(rows).unwrap());
    let z = g.l2_normalize_rows(z).unwrap();
    let l = supcon_loss(&mut g, z, voices, 0.07).unwrap().loss;
    g.value(l).item()
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn supcon_is_nonnegative_and_order_free(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 6),
        shift in 1usize..6,
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let voices = [0, 0, 1, 1, 2, 2];
        let a = supcon(&rows, &voices);
        prop_assert!(a >= 0.0);
        let mut rr = rows.clone();
        let mut vv = voices.to_vec();
        rr.rotate_left(shift);
        vv.rotate_left(shift);
        prop_assert!((a - supcon(&rr, &vv)).abs() < 1e-12);
    }

    #[test]
    fn ari_is_symmetric_and_bounded((a, b) in (2usize..14).prop_flat_map(|n| (labels(n, 4), labels(n, 4)))) {
        let ab = adjusted_rand_index(&a, &b).unwrap();
        prop_assert_eq!(ab, adjusted_rand_index(&b, &a).unwrap());
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn clustering_yields_exactly_k_labels(
        pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..12),
        k_frac in 0.0f64..1.0,
    ) {
        let k = 1 + ((pts.len() - 1) as f64 * k_frac) as usize;
        let l = agglomerative_cluster(&pts, k).unwrap();
        let mut seen = l.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn bootstrap_interval_is_ordered(
        a in prop::collection::vec(-1.0f64..1.0, 1..30),
        b in prop::collection::vec(-1.0f64..1.0, 1..30),
        seed: u64,
    ) {
        let [lo, hi] = bootstrap_ci(&a, &b, 200, 0.95, &mut Rng::new(seed)).unwrap();
        prop_assert!(lo <= hi);
        prop_assert!(lo >= -2.0 && hi <= 2.0);
    }

    #[test]
    fn clipping_never_scales_up(g in prop::collection::vec(-10.0f64..10.0, 1..20), clip in 0.01f64..20.0) {
        let mut grads = vec![Tensor::vector(g)];
        let scale = clip_global_norm(&mut grads, clip).unwrap();
        prop_assert!(scale <= 1.0 && scale > 0.0);
        prop_assert!(grads[0].l2_norm() <= clip * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raising_the_gate_threshold_only_removes_clips(lo in -1.0f64..1.0, step in 0.0f64..0.5) {
        let corpus = generate_synthetic(&SynthConfig {
            num_voices: 3,
            clips_per_voice_per_lang: 4,
            feature_dim: 12,
            noise_scale: 0.8,
            ..SynthConfig::default()
        })
        .unwrap();
        let hi = (lo + step).min(1.0);
        let (loose, _) = quality_gate(&corpus, &PassThrough, lo).unwrap();
        let (strict, _) = quality_gate(&corpus, &PassThrough, hi).unwrap();
        let kept: std::collections::BTreeSet<_> = loose.clips.iter().map(|c| &c.clip_id).collect();
        prop_assert!(strict.clips.iter().all(|c| kept.contains(&c.clip_id)));
    }
}
