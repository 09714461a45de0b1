use crate::qlearning::EpisodeLog;

/// Trailing mean over at most `window` points, shorter at the head.
///
/// A zero window is treated as one.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn smoothed_rewards(logs: &[EpisodeLog], window: usize) -> Vec<f64> {
    let rewards: Vec<f64> = logs.iter().map(|l| l.cum_reward).collect();
    moving_average(&rewards, window)
}

/// First episode from which the smoothed reward stays `>= threshold` for
/// `patience` consecutive episodes.
pub fn episodes_to_threshold(
    logs: &[EpisodeLog],
    threshold: f64,
    window: usize,
    patience: usize,
) -> Option<usize> {
    first_sustained(&smoothed_rewards(logs, window), threshold, patience)
}

/// Same scan on an already smoothed series.
pub fn first_sustained(smoothed: &[f64], threshold: f64, patience: usize) -> Option<usize> {
    let patience = patience.max(1);
    let mut run = 0;
    for (i, &v) in smoothed.iter().enumerate() {
        if v >= threshold {
            run += 1;
            if run == patience {
                return Some(i + 1 - patience);
            }
        } else {
            run = 0;
        }
    }
    None
}
