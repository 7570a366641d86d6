use dragstream_core::drag::{DragInstruction, DragMode, HandleSpec, Mask, OpType};
use dragstream_core::model::VideoFrame;
use dragstream_engine::protocol::interleave;
use dragstream_engine::store::parse_log;
use dragstream_engine::{Command, EngineConfig};
use proptest::prelude::*;

fn command() -> impl Strategy<Value = Command> {
    let drag = (0usize..20, 1i64..6, 1i64..6, prop::collection::vec((0i64..8, 0i64..8), 1..4), any::<bool>()).prop_map(
        |(k, r, c, trajectory, editing)| {
            let trajectory = if editing { trajectory[..1].to_vec() } else { trajectory };
            Command::SubmitDrag {
                instruction: DragInstruction {
                    frame_index: k,
                    mode: if editing { DragMode::Editing } else { DragMode::Animation },
                    non_editable: Mask::rect(8, 8, 7, 0, 7, 7),
                    handles: vec![HandleSpec {
                        op: OpType::Translation,
                        region: Mask::rect(8, 8, r - 1, c - 1, r + 1, c + 1),
                        handle_point: (r, c),
                        trajectory,
                        center: None,
                    }],
                },
            }
        },
    );
    prop_oneof![
        Just(Command::NextFrame),
        Just(Command::Pause),
        Just(Command::Resume),
        drag,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn command_log_round_trips(cmds in prop::collection::vec(command(), 0..12)) {
        let text: String = cmds.iter().map(|c| serde_json::to_string(c).unwrap() + "\n").collect();
        prop_assert_eq!(parse_log(&text).unwrap(), cmds);
    }

    #[test]
    fn config_round_trips_through_toml(
        seed in any::<u32>(),
        noise in any::<u32>(),
        lr in 1e-4f64..1.0,
        iterations in 1usize..10,
        keep in prop::collection::vec(any::<bool>(), 3),
        radius in 0usize..5,
    ) {
        let mut cfg = EngineConfig::default();
        cfg.model.seed = seed as u64;
        cfg.seeds.noise = noise as u64;
        cfg.optim.lr = lr;
        cfg.optim.iterations = iterations;
        cfg.optim.cutoffs = [0.2, 0.4, 0.6].iter().zip(&keep).filter(|(_, k)| **k).map(|(c, _)| *c).chain([1.0]).collect();
        cfg.metrics.dai_radius = radius;
        prop_assert_eq!(EngineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn interleaving_keeps_every_pixel(h in 1usize..6, w in 1usize..6, seed in any::<u8>()) {
        let rgb: Vec<u8> = (0..3 * h * w).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let frame = VideoFrame { frame_index: 0, height: h, width: w, rgb };
        let packed = interleave(&frame);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    prop_assert_eq!(packed[(r * w + c) * 3 + ch], frame.pixel(ch, r, c));
                }
            }
        }
    }

    #[test]
    fn noise_seeds_differ_per_frame(base in any::<u64>(), a in 0usize..1000, b in 0usize..1000) {
        prop_assume!(a != b);
        let mut cfg = EngineConfig::default();
        cfg.seeds.noise = base;
        prop_assert_ne!(cfg.noise_seed(a), cfg.noise_seed(b));
    }
}
