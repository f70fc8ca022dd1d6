//! Brute-force discrete-event oracle for the timed conversion semantics.
//!
//! Predictions come straight from first principles: enumerate every cache
//! write and every poll instant over a closed time window, determine what
//! value each poll sees, and replay the production-mode rules on paper.
//! Nothing here touches the wrapper engine, the scheduler or the server, so
//! agreement between the two paths is meaningful.
//!
//! Tie rule at equal instants: the server's cache write lands before the
//! poll (the scheduler orders server events ahead of wrapper events).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Periodic,
    ChangeBased,
}

#[derive(Debug, Clone)]
pub struct OracleInput {
    /// Cache sampling period of the single item.
    pub sampling_period_ms: u64,
    /// Value written at cache tick k (clamped at the last entry).
    pub values: Vec<i64>,
    /// Wrapper update period.
    pub update_period_ms: u64,
    pub mode: OracleMode,
    /// Closed run window `[0, t_end_ms]`.
    pub t_end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OraclePrediction {
    /// `(poll instant, visible value)` for every emission, in order.
    pub emissions: Vec<(u64, i64)>,
    /// Consecutive emissions with equal values (PPM redundancy).
    pub redundant_consecutive: usize,
    /// Cache writes within the window that changed the value.
    pub changes_in_window: usize,
    /// Changes never individually reflected by an emission.
    pub missed_changes: usize,
}

pub fn predict(input: &OracleInput) -> OraclePrediction {
    let value_at_tick =
        |k: u64| input.values[(k as usize).min(input.values.len() - 1)];
    // Value visible at time t: the latest cache write at or before t.
    let visible = |t: u64| value_at_tick(t / input.sampling_period_ms);

    let mut changes_in_window = 0usize;
    let mut k = 1;
    while k * input.sampling_period_ms <= input.t_end_ms {
        if value_at_tick(k) != value_at_tick(k - 1) {
            changes_in_window += 1;
        }
        k += 1;
    }

    let mut emissions: Vec<(u64, i64)> = Vec::new();
    let mut last_emitted: Option<i64> = None;
    let mut t = 0;
    while t <= input.t_end_ms {
        let v = visible(t);
        let emit = match input.mode {
            OracleMode::Periodic => true,
            OracleMode::ChangeBased => last_emitted != Some(v),
        };
        if emit {
            emissions.push((t, v));
            last_emitted = Some(v);
        }
        t += input.update_period_ms;
    }

    let redundant_consecutive = emissions
        .windows(2)
        .filter(|pair| pair[0].1 == pair[1].1)
        .count();
    let post_first = emissions.len().saturating_sub(1);
    let missed_changes = match input.mode {
        OracleMode::ChangeBased => changes_in_window.saturating_sub(post_first),
        OracleMode::Periodic => 0,
    };

    OraclePrediction { emissions, redundant_consecutive, changes_in_window, missed_changes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh(n: i64) -> Vec<i64> {
        (0..n).collect()
    }

    #[test]
    fn synchronized_case_every_value_once() {
        let p = predict(&OracleInput {
            sampling_period_ms: 100,
            values: fresh(200),
            update_period_ms: 100,
            mode: OracleMode::Periodic,
            t_end_ms: 10_000,
        });
        assert_eq!(p.emissions.len(), 101);
        let mut vals: Vec<i64> = p.emissions.iter().map(|(_, v)| *v).collect();
        vals.dedup();
        assert_eq!(vals, fresh(101));
        assert_eq!(p.redundant_consecutive, 0);
    }

    #[test]
    fn oversampling_produces_redundancy() {
        let p = predict(&OracleInput {
            sampling_period_ms: 100,
            values: fresh(200),
            update_period_ms: 40,
            mode: OracleMode::Periodic,
            t_end_ms: 10_000,
        });
        assert_eq!(p.emissions.len(), 251);
        assert_eq!(p.redundant_consecutive, 150);
    }

    #[test]
    fn change_based_tracks_every_change_when_fast_enough() {
        let p = predict(&OracleInput {
            sampling_period_ms: 100,
            values: fresh(200),
            update_period_ms: 40,
            mode: OracleMode::ChangeBased,
            t_end_ms: 10_000,
        });
        assert_eq!(p.changes_in_window, 100);
        assert_eq!(p.emissions.len(), 101); // initial + one per change
        assert_eq!(p.missed_changes, 0);
    }

    #[test]
    fn slow_polling_misses_changes() {
        let p = predict(&OracleInput {
            sampling_period_ms: 100,
            values: fresh(200),
            update_period_ms: 300,
            mode: OracleMode::ChangeBased,
            t_end_ms: 10_000,
        });
        assert_eq!(p.emissions.len(), 34); // polls at 0, 300, ..., 9900
        assert_eq!(p.changes_in_window, 100);
        assert_eq!(p.missed_changes, 100 - 33);
    }
}
