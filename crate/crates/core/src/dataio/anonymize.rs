//! Release-safe shuffling of a testing matrix.
//!
//! On each day, rows whose forward-processing state is identical are
//! interchangeable as far as every estimator is concerned, so their
//! remaining cells (today onwards) can be permuted among them. Doing this day
//! by day mixes individual trajectories while leaving every per-day count,
//! stratum and schedule row the adjustment pipeline produces unchanged.
//! Row order is randomized at the end and id hints are dropped.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::adjust::{AdjustmentPolicy, RowProcessor, RowState, RowStatus};
use crate::dataio::matrix::TestingMatrix;
use crate::error::Result;

pub fn anonymize_shuffle(matrix: &TestingMatrix, policy: &AdjustmentPolicy, seed: u64) -> Result<TestingMatrix> {
    policy.validate()?;
    matrix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = matrix.rows.clone();
    let mut procs: Vec<RowProcessor> = rows.iter().map(|_| RowProcessor::new(policy, matrix)).collect();
    let days = matrix.days();
    for t in 1..=days {
        let k = (t - 1) as usize;
        let mut groups: BTreeMap<RowState, Vec<usize>> = BTreeMap::new();
        for (i, p) in procs.iter_mut().enumerate() {
            // Removed rows are outside the population today; their cells
            // are dropped anyway but their future is tied to their episode.
            if p.status(t) != RowStatus::Removed {
                groups.entry(p.state()).or_default().push(i);
            }
        }
        for members in groups.values().filter(|m| m.len() > 1) {
            let mut perm = members.clone();
            perm.shuffle(&mut rng);
            let suffixes: Vec<Vec<_>> = perm.iter().map(|&j| rows[j][k..].to_vec()).collect();
            for (&i, s) in members.iter().zip(suffixes) {
                rows[i][k..].copy_from_slice(&s);
            }
        }
        for (p, r) in procs.iter_mut().zip(&rows) {
            p.step(t, r[k]);
        }
    }
    rows.shuffle(&mut rng);
    Ok(TestingMatrix {
        start: matrix.start,
        id_hints: None,
        rows,
    })
}
