use super::TrainConfig;

/// Plateau rule: drops the learning rate by `lr_drop_factor` when the best
/// error of the last `plateau_window` epochs fails to beat the best error
/// before them by at least `plateau_min_delta`.
///
/// With fewer than `plateau_window + 1` entries there is nothing to compare
/// against and the rate is returned unchanged.
pub fn lr_schedule_step(history: &[f32], current_lr: f32, cfg: &TrainConfig) -> f32 {
    let w = cfg.plateau_window;
    if w == 0 || history.len() <= w {
        return current_lr;
    }
    let (before, recent) = history.split_at(history.len() - w);
    let best_before = before.iter().copied().fold(f32::INFINITY, f32::min);
    let best_recent = recent.iter().copied().fold(f32::INFINITY, f32::min);
    if best_recent > best_before - cfg.plateau_min_delta {
        current_lr * cfg.lr_drop_factor
    } else {
        current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize) -> TrainConfig {
        TrainConfig {
            plateau_window: window,
            plateau_min_delta: 1e-4,
            lr_drop_factor: 0.1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn improving_history_keeps_rate() {
        assert_eq!(lr_schedule_step(&[0.5, 0.4, 0.3], 0.1, &cfg(3)), 0.1);
        assert_eq!(lr_schedule_step(&[0.5, 0.4, 0.3, 0.2], 0.1, &cfg(3)), 0.1);
    }

    #[test]
    fn plateau_drops_rate() {
        let lr = lr_schedule_step(&[0.3, 0.31, 0.30, 0.305], 0.1, &cfg(3));
        assert_eq!(lr, 0.1 * 0.1);
        // Still flat on the next call: consecutive drops are allowed.
        let lr2 = lr_schedule_step(&[0.3, 0.31, 0.30, 0.305, 0.302], lr, &cfg(3));
        assert_eq!(lr2, lr * 0.1);
    }

    #[test]
    fn improvement_smaller_than_min_delta_still_drops() {
        let lr = lr_schedule_step(&[0.3, 0.31, 0.29995, 0.31], 1.0, &cfg(3));
        assert_eq!(lr, 0.1);
    }

    #[test]
    fn short_history_is_unchanged() {
        assert_eq!(lr_schedule_step(&[0.3, 0.3], 0.1, &cfg(3)), 0.1);
        assert_eq!(lr_schedule_step(&[0.3, 0.3, 0.3], 0.1, &cfg(3)), 0.1);
        assert_eq!(lr_schedule_step(&[], 0.1, &cfg(3)), 0.1);
    }
}
