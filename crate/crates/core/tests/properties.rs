//! Property tests for the cross-module invariants.

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thoughtchain::chain_model::{
    pairs_from_chain, read_reasoning_json, read_tuning_csv, write_reasoning_json, write_tuning_csv, PromptSpec,
    ReasoningRecord, ThoughtChain, TuningPair,
};
use thoughtchain::gateway::compose_chain_image;
use thoughtchain::gateway::procedural::ProceduralGateway;
use thoughtchain::gateway::Counting;
use thoughtchain::generator::flow::{fm_loss, interpolate, target_velocity};
use thoughtchain::generator::net::{Arch, VelocityNet};
use thoughtchain::generator::optim::{OptimConfig, Optimizer};
use thoughtchain::generator::tensor::{VideoShape, VideoTensor};
use thoughtchain::generator::text::encode_text;
use thoughtchain::generator::train::{adapter_step, Draws, TrainItem};
use thoughtchain::harness::catalog::Direction;
use thoughtchain::harness::config::PipelineConfig;
use thoughtchain::harness::eval::{default_anchors, load_video, monotonicity, smoothness};
use thoughtchain::lora::{inject, LayerSelector};
use thoughtchain::reasoner::{run_reasoning, ReasonerConfig};
use thoughtchain::sampler::export_video;

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.\"'\\n\u{e9}\u{4e2d}-]{0,40}".prop_map(|s| format!("x{s}"))
}

fn record(keys: usize) -> impl Strategy<Value = ReasoningRecord> {
    (
        text(),
        text(),
        text(),
        text(),
        text(),
        proptest::collection::vec(text(), keys),
    )
        .prop_map(
            |(input_prompt, thoughts, consequences, context_frame, concise_prompt, key_frames)| ReasoningRecord {
                input_prompt,
                thoughts,
                consequences,
                context_frame,
                concise_prompt,
                key_frames,
            },
        )
}

fn solid(w: u32, h: u32, seed: u8) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([seed.wrapping_add(x as u8), seed ^ (y as u8), seed]))
}

fn video(seed: u64, shape: VideoShape) -> VideoTensor {
    VideoTensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_and_determinism(texts in proptest::collection::vec(text(), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let pairs: Vec<TuningPair> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| TuningPair { file_name: format!("s_{i}.png"), text: t.clone() })
            .collect();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_tuning_csv(&pairs, &a).unwrap();
        write_tuning_csv(&pairs, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        prop_assert_eq!(read_tuning_csv(&a).unwrap(), pairs);
    }

    #[test]
    fn reasoning_json_round_trip(rec in (0usize..5).prop_flat_map(record)) {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        write_reasoning_json("scn_1", &rec, &a).unwrap();
        write_reasoning_json("scn_1", &rec, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let (id, back) = read_reasoning_json(&a).unwrap();
        prop_assert_eq!(id, "scn_1");
        prop_assert_eq!(back, rec);
    }

    #[test]
    fn pairs_match_chain_length(rec in (0usize..6).prop_flat_map(record)) {
        let mut chain = ThoughtChain::default();
        for i in 0..=rec.key_frames.len() {
            chain.push(solid(8, 8, i as u8), format!("s_{i}.png"), "caption".into()).unwrap();
        }
        let pairs = pairs_from_chain(&chain, &rec).unwrap();
        prop_assert_eq!(pairs.len(), chain.len());
        prop_assert_eq!(&pairs[0].text, &rec.concise_prompt);
    }

    #[test]
    fn composition_is_associative(ws in proptest::collection::vec(1u32..12, 3), h in 1u32..10, s in any::<u8>()) {
        let imgs: Vec<RgbImage> = ws.iter().enumerate().map(|(i, w)| solid(*w, h, s.wrapping_add(i as u8 * 40))).collect();
        let ab = compose_chain_image(&[&imgs[0], &imgs[1]]).unwrap();
        let left = compose_chain_image(&[&ab, &imgs[2]]).unwrap();
        let bc = compose_chain_image(&[&imgs[1], &imgs[2]]).unwrap();
        let right = compose_chain_image(&[&imgs[0], &bc]).unwrap();
        let all = compose_chain_image(&[&imgs[0], &imgs[1], &imgs[2]]).unwrap();
        prop_assert_eq!(&left, &all);
        prop_assert_eq!(&right, &all);
        prop_assert_eq!(all.width(), ws.iter().sum::<u32>());
    }

    #[test]
    fn path_derivative_is_the_velocity(seed in any::<u64>(), t1 in 0.0f64..0.5, t2 in 0.5f64..1.0) {
        let shape = VideoShape::new(2, 3, 3, 3);
        let (x0, x1) = (video(seed, shape), video(seed ^ 1, shape));
        let v = target_velocity(&x0, &x1).unwrap();
        let a = interpolate(&x0, &x1, t1).unwrap();
        let b = interpolate(&x0, &x1, t2).unwrap();
        for ((p, q), vi) in a.data.iter().zip(&b.data).zip(&v.data) {
            prop_assert!(((q - p) / (t2 - t1) - vi).abs() <= 1e-12 * (1.0 + vi.abs()));
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_target(seed in any::<u64>(), t in 0.0f64..1.0, eps in 1e-6f64..1.0) {
        let shape = VideoShape::new(1, 2, 2, 3);
        let (x0, x1) = (video(seed, shape), video(seed ^ 7, shape));
        let c = encode_text("a", 4).unwrap();
        let v = target_velocity(&x0, &x1).unwrap();
        let draws = vec![(x0.clone(), t)];
        let exact = |_: &VideoTensor, _: f64, _: &thoughtchain::generator::text::TextEmbedding| Ok(v.clone());
        prop_assert_eq!(fm_loss(&exact, &x1, &c, &draws).unwrap(), 0.0);
        let off = |_: &VideoTensor, _: f64, _: &thoughtchain::generator::text::TextEmbedding| {
            let mut w = v.clone();
            w.data[0] += eps;
            Ok(w)
        };
        prop_assert!(fm_loss(&off, &x1, &c, &draws).unwrap() > 0.0);
    }

    #[test]
    fn fresh_adapters_are_a_no_op(seed in any::<u64>(), rank in 1usize..3, alpha in 0.5f64..16.0, t in 0.0f64..1.0) {
        let net = VelocityNet::init_random(Arch::tiny(), seed, 0.5).unwrap();
        let ap = inject(&net, &LayerSelector::AllLinear, rank, alpha, seed ^ 3).unwrap();
        let x = video(seed, net.arch.video_shape(2));
        let c = encode_text("red up", net.arch.text_dim).unwrap();
        prop_assert_eq!(
            ap.base.predict(Some(&ap.adapters), &x, t, &c).unwrap().data,
            net.predict(None, &x, t, &c).unwrap().data
        );
    }

    #[test]
    fn export_reload_within_one_level(seed in any::<u64>(), frames in 1usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let v = video(seed, VideoShape::new(frames, 5, 4, 3)).clamped();
        export_video(&v, dir.path()).unwrap();
        let back = load_video(dir.path()).unwrap();
        prop_assert_eq!(back.shape, v.shape);
        for (a, b) in back.data.iter().zip(&v.data) {
            // One 8-bit level is 2/255 in [-1, 1].
            prop_assert!((a - b).abs() <= 2.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn eval_metrics_are_bounded(seed in any::<u64>(), frames in 2usize..8, vals in proptest::collection::vec(-1.0f64..1.0, 2..20)) {
        let v = video(seed, VideoShape::new(frames, 4, 4, 3)).clamped();
        let s = smoothness(&v);
        prop_assert!(s.is_finite() && s >= 0.0);
        for d in [Direction::Increasing, Direction::Decreasing] {
            let m = monotonicity(&vals, d);
            prop_assert!((0.0..=1.0).contains(&m));
        }
        let up = monotonicity(&vals, Direction::Increasing);
        let down = monotonicity(&vals, Direction::Decreasing);
        prop_assert!(up + down <= 1.0 + 1e-12);
    }

    #[test]
    fn anchors_are_in_range_and_ordered(n in 1usize..10, frames in 1usize..40) {
        let a = default_anchors(n, frames);
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().all(|x| *x < frames.max(1)));
        prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
        if n >= 2 {
            prop_assert_eq!(a[0], 0);
            prop_assert_eq!(a[n - 1], frames - 1);
        }
    }

    #[test]
    fn config_toml_round_trip(seed in any::<u64>(), steps in 1usize..500, frames in 2usize..16) {
        let mut cfg = PipelineConfig::default();
        cfg.tune.seed = seed;
        cfg.tune.steps = steps;
        cfg.reasoner.max_frames = frames;
        let back = PipelineConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn procedural_loop_accounting(
        color in prop::sample::select(vec!["red", "green", "blue", "white"]),
        noun in prop::sample::select(vec!["ball", "box", "rock", "apple"]),
        verb in prop::sample::select(vec!["falls to the ground", "rolls across the ground"]),
        max_frames in 2usize..8,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let prompt = PromptSpec::new(format!("A {color} {noun} {verb}."), "p").unwrap();
        let counting = Counting::new(&ProceduralGateway);
        let cfg = ReasonerConfig { max_frames, image_size: (64, 64) };
        let out = run_reasoning(&prompt, &counting, &cfg, dir.path()).unwrap();
        let n = out.chain.len();
        let stages = if verb.starts_with("roll") { 5 } else { 3 };
        prop_assert_eq!(n, stages.min(max_frames));
        prop_assert_eq!(out.truncated, stages > max_frames);
        prop_assert_eq!(out.counts.perception, n - 1);
        prop_assert_eq!(out.counts.edit, n - 1);
        for v in &out.chain.visual {
            let disk = image::open(dir.path().join(&v.file_path)).unwrap().to_rgb8();
            prop_assert_eq!(&disk, &v.image);
        }
    }

    #[test]
    fn tuning_never_moves_the_base(seed in any::<u64>(), steps in 1usize..6) {
        let net = VelocityNet::init_random(Arch::tiny(), seed, 0.5).unwrap();
        let hash = net.param_hash();
        let mut ap = inject(&net, &LayerSelector::AllLinear, 1, 1.0, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<TrainItem> = ["a b", "c d"]
            .iter()
            .map(|c| TrainItem::new(c, VideoTensor::randn(net.arch.video_shape(1), &mut rng).clamped(), net.arch.text_dim).unwrap())
            .collect();
        let mut opt = Optimizer::new(OptimConfig::adam(1e-2)).unwrap();
        for _ in 0..steps {
            let d = Draws::sample(&items, vec![0, 1], &mut rng);
            let loss = adapter_step(&mut ap, &mut opt, &d.batch(&items)).unwrap();
            prop_assert!(loss.is_finite());
            prop_assert_eq!(ap.base.param_hash(), hash.clone());
        }
    }
}
