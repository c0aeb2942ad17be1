use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const TEST_FRACTION: f64 = 0.2;
/// Share of the remaining (non-test) documents held out for validation.
pub const VAL_FRACTION: f64 = 0.1;
pub const MIN_CORPUS: usize = 10;

/// Document indices of each split, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Stratified split: per class, `round(0.2·n)` documents go to test and
/// `round(0.1·rest)` of the remainder to validation, after a seeded shuffle.
pub fn split(labels: &[usize], seed: u64) -> Result<Split> {
    if labels.len() < MIN_CORPUS {
        return Err(Error::TooFewSamples {
            needed: MIN_CORPUS,
            got: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = seed::rng_for(seed, "split");
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (TEST_FRACTION * idx.len() as f64).round() as usize;
        let n_val = (VAL_FRACTION * (idx.len() - n_test) as f64).round() as usize;
        out.test.extend(&idx[..n_test]);
        out.val.extend(&idx[n_test..n_test + n_val]);
        out.train.extend(&idx[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few() {
        assert!(matches!(split(&[0; 9], 1), Err(Error::TooFewSamples { needed: 10, got: 9 })));
    }
}
