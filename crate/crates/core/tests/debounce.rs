use proptest::prelude::*;
use safemon_core::runtime::{replay_levels, Debounce, SafetyModeConfig};

fn config(window: usize, quorum: usize) -> SafetyModeConfig {
    SafetyModeConfig { debounce: Debounce { window, quorum }, ..Default::default() }
}

#[test]
fn hand_traced_sequences() {
    let c = config(3, 3);
    assert_eq!(replay_levels(&[1, 3, 3, 1, 1, 1], &c), vec![3, 3, 3, 3, 3, 1]);
    assert_eq!(replay_levels(&[2, 2, 2, 1, 1, 1, 3], &c), vec![3, 3, 2, 2, 2, 1, 3]);
    assert_eq!(replay_levels(&[1, 2, 1, 3, 3], &config(3, 2)), vec![3, 2, 1, 3, 3]);
}

proptest! {
    #[test]
    fn demotion_needs_quorum(levels in prop::collection::vec(1usize..=3, 1..60), window in 1usize..6, q in 1usize..6) {
        let quorum = q.min(window);
        let cfg = config(window, quorum);
        let modes = replay_levels(&levels, &cfg);
        let mut prev = 3;
        for (t, &mode) in modes.iter().enumerate() {
            let recent = &levels[t.saturating_sub(window - 1)..=t];
            if mode < prev {
                // a demotion to `mode` is backed by a quorum of verdicts at or below it
                prop_assert!(recent.iter().filter(|&&v| v <= mode).count() >= quorum);
            }
            if mode > prev {
                prop_assert_eq!(mode, levels[t]);
            }
            // promotion is immediate, so the mode is never below the latest verdict
            prop_assert!(mode >= levels[t]);
            prev = mode;
        }
        prop_assert_eq!(replay_levels(&levels, &cfg), modes);
    }

    #[test]
    fn unit_window_follows_verdicts(levels in prop::collection::vec(1usize..=3, 0..40)) {
        prop_assert_eq!(replay_levels(&levels, &config(1, 1)), levels);
    }
}
