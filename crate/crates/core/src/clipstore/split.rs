use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::ClipRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Clip-level partition: every segment of a clip follows its clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub ratio: [f64; 3],
    pub seed: u64,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }

    pub fn part_of(&self, clip_id: &str) -> Option<SplitPart> {
        [SplitPart::Train, SplitPart::Validation, SplitPart::Test]
            .into_iter()
            .find(|&p| self.part(p).iter().any(|c| c == clip_id))
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let mut seen = BTreeSet::new();
        for id in s.train.iter().chain(&s.validation).chain(&s.test) {
            if !seen.insert(id) {
                return Err(Error::format(path, format!("clip {id} appears in more than one split")));
            }
        }
        Ok(s)
    }
}

/// Shuffle clips with `seed` and cut them by `ratio`: train gets
/// `floor(r0 N / sum)`, validation `floor(r1 N / sum)`, test the rest.
/// The outcome depends only on the set of clip ids, not on input order.
pub fn make_splits(clips: &[ClipRecord], ratio: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratio.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Invalid(format!("split ratio {ratio:?} must be non-negative")));
    }
    let sum: f64 = ratio.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Invalid("split ratio must not be all zero".into()));
    }
    let mut ids: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Invalid(format!("duplicate clip id {}", w[0])));
    }
    let n = ids.len();
    let parts = ratio.iter().filter(|r| **r > 0.0).count();
    if n < parts {
        return Err(Error::Invalid(format!("{n} clips cannot fill {parts} split parts")));
    }
    let count = |r: f64| ((r * n as f64) / sum + 1e-9).floor() as usize;
    let n_train = count(ratio[0]);
    let n_val = count(ratio[1]).min(n - n_train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
        ratio,
        seed,
    })
}
