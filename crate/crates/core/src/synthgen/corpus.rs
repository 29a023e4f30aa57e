use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::Renderer;
use super::spec::{EntrySide, SynthClipSpec};
use crate::clipstore::{write_manifest, ClipRecord, FrameDir, FrameSource, Label, Origin};
use crate::error::{Error, Result};
use crate::frames::FrameVolume;

/// ChaCha stream of the label shuffle. Kept off stream 0 so a split drawn
/// with the same seed is not correlated with the labels.
const LABEL_STREAM: u64 = 0x6c61_6265_6c73;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusOptions {
    pub n: usize,
    /// Fraction of near-miss clips.
    pub balance: f64,
    pub master_seed: u64,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub fps: f64,
    pub duration_s: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            n: 300,
            balance: 0.5,
            master_seed: 0,
            resolution: (112, 112),
            fps: 8.0,
            duration_s: 15.0,
        }
    }
}

impl CorpusOptions {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n == 0 {
            out.push("synth.n must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.balance) {
            out.push(format!("synth.balance {} must lie in [0, 1]", self.balance));
        }
        if self.resolution.0 < 8 || self.resolution.1 < 8 {
            out.push(format!("synth.resolution {:?} must be at least 8x8", self.resolution));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            out.push(format!("synth.fps {} must be positive", self.fps));
        }
        if !(self.duration_s >= 10.0 && self.duration_s.is_finite()) {
            out.push(format!(
                "synth.duration_s {} must cover the 10 s labelled span",
                self.duration_s
            ));
        }
        out
    }

    /// Near-miss clip count: `balance * n` rounded half to even.
    pub fn near_miss_count(&self) -> usize {
        (self.balance * self.n as f64).round_ties_even() as usize
    }
}

/// Seed of clip `index`: one SplitMix64 step from
/// `master_seed + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn clip_seed(master_seed: u64, index: usize) -> u64 {
    let mut z = master_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub record: ClipRecord,
    pub spec: SynthClipSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub options: CorpusOptions,
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn records(&self) -> Vec<ClipRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }
}

/// Draw the specs and manifest records of a corpus. Which clips are
/// near-miss is decided by a shuffle seeded with `master_seed`.
pub fn generate_corpus(opts: &CorpusOptions) -> Result<Corpus> {
    let p = opts.problems();
    if !p.is_empty() {
        return Err(Error::Config(p.join("; ")));
    }
    let mut order: Vec<usize> = (0..opts.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.master_seed);
    rng.set_stream(LABEL_STREAM);
    order.shuffle(&mut rng);
    let mut near_miss = vec![false; opts.n];
    for &i in &order[..opts.near_miss_count()] {
        near_miss[i] = true;
    }
    let entries = (0..opts.n)
        .map(|i| {
            let label = if near_miss[i] { Label::NearMiss } else { Label::SafeDriving };
            let spec = SynthClipSpec::draw(clip_seed(opts.master_seed, i), label, opts.resolution, opts.fps, opts.duration_s);
            spec.validate()?;
            let event = spec.intruder.as_ref().map(|intr| {
                let (h, w) = spec.resolution;
                let travel = match intr.entry_side {
                    EntrySide::Left | EntrySide::Right => (w - intr.bbox_size.1) as f64 / 2.0,
                    EntrySide::Top => (h - intr.bbox_size.0) as f64 / 2.0,
                };
                (intr.onset_s + travel / intr.speed_px_per_s).min(spec.duration_s)
            });
            let id = format!("synth_{i:04}");
            let record = ClipRecord::new(&id, PathBuf::from("clips").join(&id), opts.fps, opts.duration_s, Origin::Synthetic, event)?;
            Ok(CorpusEntry { record, spec })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        options: opts.clone(),
        entries,
    })
}

/// Write numbered PNG frames per clip under `dir/clips/`, a ground-truth
/// sidecar per clip under `dir/truth/`, and `dir/manifest.tsv`. Returns the
/// manifest path.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    let truth_dir = dir.join("truth");
    fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;
    for e in &corpus.entries {
        let clip_dir = dir.join(&e.record.source_path);
        fs::create_dir_all(&clip_dir).map_err(|err| Error::io(&clip_dir, err))?;
        let r = Renderer::new(&e.spec)?;
        for i in 0..r.n_frames() {
            FrameDir::write_frame(&FrameDir::frame_path(&clip_dir, i), &r.render_frame(i))?;
        }
        r.ground_truth().save(&truth_dir.join(format!("{}.json", e.record.clip_id)))?;
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &corpus.records())?;
    Ok(manifest)
}

/// Frame source that renders synthetic clips on demand.
#[derive(Clone, Debug)]
pub struct SynthSource {
    renderers: HashMap<String, Renderer>,
}

impl SynthSource {
    pub fn new(corpus: &Corpus) -> Result<Self> {
        let renderers = corpus
            .entries
            .iter()
            .map(|e| Ok((e.record.clip_id.clone(), Renderer::new(&e.spec)?)))
            .collect::<Result<_>>()?;
        Ok(Self { renderers })
    }

    pub fn renderer(&self, clip_id: &str) -> Option<&Renderer> {
        self.renderers.get(clip_id)
    }
}

impl FrameSource for SynthSource {
    fn load(&self, clip: &ClipRecord, indices: &[usize]) -> Result<FrameVolume> {
        let r = self
            .renderers
            .get(&clip.clip_id)
            .ok_or_else(|| Error::NotFound(format!("synthetic clip {}", clip.clip_id)))?;
        let frames = indices
            .iter()
            .map(|&i| {
                if i >= r.n_frames() {
                    Err(Error::Invalid(format!("frame {i} out of range for clip {}", clip.clip_id)))
                } else {
                    Ok(r.render_frame(i))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        FrameVolume::from_frames(frames)
    }
}
