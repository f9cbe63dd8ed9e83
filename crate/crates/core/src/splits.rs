//! Leakage-aware corpus splitting into train/dev and three test sets.
//!
//! Extraction order:
//! 1. `temporal_test`: the last `temporal_test_frac` of posts globally by
//!    `(timestamp, id)`. If posts outside the nominal cut share the boundary
//!    timestamp they are promoted into the temporal set, so the strict
//!    ordering `max(train ts) < min(temporal ts)` always holds.
//! 2. `user_test`: every non-temporal post of a seeded random sample of
//!    users (about `user_test_frac` of all users). Sampled users contribute
//!    nothing to any other split, which enforces user exclusivity.
//! 3. `random_test`: a seeded uniform sample of the remainder, sized as
//!    `random_test_frac` of the whole corpus.
//! 4. `dev`: a seeded uniform sample of the new remainder, sized as
//!    `dev_frac` of that remainder.
//! 5. `train`: everything left.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::CleanPost;
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

/// Fractions and seed controlling [`build_splits`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitSpec {
    #[serde(default = "default_frac")]
    pub random_test_frac: f64,
    #[serde(default = "default_frac")]
    pub user_test_frac: f64,
    #[serde(default = "default_frac")]
    pub temporal_test_frac: f64,
    #[serde(default = "default_frac")]
    pub dev_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_frac() -> f64 {
    0.10
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            random_test_frac: 0.10,
            user_test_frac: 0.10,
            temporal_test_frac: 0.10,
            dev_frac: 0.10,
            seed: 0,
        }
    }
}

/// Sizes, label counts, and parameters of a finished split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub total_posts: usize,
    pub total_users: usize,
    pub sampled_users: usize,
    pub sizes: BTreeMap<String, usize>,
    /// split name -> label name -> count
    pub label_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

/// The five output sets plus the manifest.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Vec<CleanPost>,
    pub dev: Vec<CleanPost>,
    pub random_test: Vec<CleanPost>,
    pub user_test: Vec<CleanPost>,
    pub temporal_test: Vec<CleanPost>,
    pub manifest: SplitManifest,
}

impl SplitResult {
    pub fn named_sets(&self) -> [(&'static str, &Vec<CleanPost>); 5] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("random_test", &self.random_test),
            ("user_test", &self.user_test),
            ("temporal_test", &self.temporal_test),
        ]
    }
}

fn validate(spec: &SplitSpec) -> Result<()> {
    let fracs = [
        ("random_test_frac", spec.random_test_frac),
        ("user_test_frac", spec.user_test_frac),
        ("temporal_test_frac", spec.temporal_test_frac),
        ("dev_frac", spec.dev_frac),
    ];
    for (name, f) in fracs {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Split(format!("{name} must be in (0, 1), got {f}")));
        }
    }
    let post_level = spec.random_test_frac + spec.temporal_test_frac + spec.dev_frac;
    if post_level >= 1.0 {
        return Err(Error::Split(format!(
            "post-level fractions must sum below 1, got {post_level}"
        )));
    }
    Ok(())
}

fn round_count(n: usize, frac: f64) -> usize {
    (n as f64 * frac).round() as usize
}

/// Build the five splits. Deterministic for a given `(posts, spec)`; the
/// output does not depend on the input order of `posts`.
pub fn build_splits(posts: &[CleanPost], spec: &SplitSpec) -> Result<SplitResult> {
    validate(spec)?;
    if posts.is_empty() {
        return Err(Error::Split("no posts to split".to_string()));
    }
    let mut seen = HashSet::new();
    for p in posts {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Split(format!("duplicate post id: {}", p.id)));
        }
    }

    // Canonical order: (timestamp, id).
    let mut order: Vec<usize> = (0..posts.len()).collect();
    order.sort_by(|&a, &b| {
        (posts[a].timestamp, posts[a].id.as_str()).cmp(&(posts[b].timestamp, posts[b].id.as_str()))
    });

    // 1. Temporal tail, promoting boundary-timestamp ties into the tail.
    let n = posts.len();
    let n_temporal = round_count(n, spec.temporal_test_frac).max(1);
    if n_temporal >= n {
        return Err(Error::Split("temporal test would consume the whole corpus".to_string()));
    }
    let mut cut = n - n_temporal;
    let boundary_ts = posts[order[cut]].timestamp;
    while cut > 0 && posts[order[cut - 1]].timestamp == boundary_ts {
        cut -= 1;
    }
    if cut == 0 {
        return Err(Error::Split(
            "all posts share the boundary timestamp; temporal split impossible".to_string(),
        ));
    }
    let temporal_idx: Vec<usize> = order[cut..].to_vec();
    let head_idx: Vec<usize> = order[..cut].to_vec();

    // 2. Seeded user sample over all users of the corpus.
    let mut users: Vec<&str> = posts.iter().map(|p| p.user_id.as_str()).collect();
    users.sort();
    users.dedup();
    let total_users = users.len();
    let n_users = round_count(total_users, spec.user_test_frac).max(1);
    if n_users >= total_users {
        return Err(Error::Split(format!(
            "user sample of {n_users} would cover all {total_users} users"
        )));
    }
    let mut user_rng = stream_rng(spec.seed, "split/user_sample");
    let mut shuffled = users.clone();
    shuffled.shuffle(&mut user_rng);
    let sampled: BTreeSet<&str> = shuffled[..n_users].iter().copied().collect();

    let (user_idx, mut remainder): (Vec<usize>, Vec<usize>) = head_idx
        .into_iter()
        .partition(|&i| sampled.contains(posts[i].user_id.as_str()));

    // 3. Random test sized against the whole corpus.
    let n_random = round_count(n, spec.random_test_frac).max(1);
    if n_random >= remainder.len() {
        return Err(Error::Split(format!(
            "random test needs {n_random} posts but only {} remain",
            remainder.len()
        )));
    }
    let mut random_rng = stream_rng(spec.seed, "split/random_test");
    remainder.shuffle(&mut random_rng);
    let random_idx: Vec<usize> = remainder[..n_random].to_vec();
    let mut rest: Vec<usize> = remainder[n_random..].to_vec();

    // 4. Dev sized against the remainder.
    let n_dev = round_count(rest.len(), spec.dev_frac).max(1);
    if n_dev >= rest.len() {
        return Err(Error::Split(format!(
            "dev needs {n_dev} posts but only {} remain",
            rest.len()
        )));
    }
    let mut dev_rng = stream_rng(spec.seed, "split/dev");
    rest.shuffle(&mut dev_rng);
    let dev_idx: Vec<usize> = rest[..n_dev].to_vec();
    let train_idx: Vec<usize> = rest[n_dev..].to_vec();

    if train_idx.is_empty() {
        return Err(Error::Split("train split would be empty".to_string()));
    }

    let collect = |mut idx: Vec<usize>| -> Vec<CleanPost> {
        idx.sort_by(|&a, &b| {
            (posts[a].timestamp, posts[a].id.as_str())
                .cmp(&(posts[b].timestamp, posts[b].id.as_str()))
        });
        idx.into_iter().map(|i| posts[i].clone()).collect()
    };

    let result_sets = [
        ("train", collect(train_idx)),
        ("dev", collect(dev_idx)),
        ("random_test", collect(random_idx)),
        ("user_test", collect(user_idx)),
        ("temporal_test", collect(temporal_idx)),
    ];

    let mut sizes = BTreeMap::new();
    let mut label_counts = BTreeMap::new();
    for (name, set) in &result_sets {
        sizes.insert(name.to_string(), set.len());
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for p in set {
            *counts.entry(p.label.name().to_string()).or_default() += 1;
        }
        label_counts.insert(name.to_string(), counts);
    }

    let manifest = SplitManifest {
        spec: spec.clone(),
        total_posts: n,
        total_users,
        sampled_users: n_users,
        sizes,
        label_counts,
    };

    let [train, dev, random_test, user_test, temporal_test] = result_sets.map(|(_, s)| s);
    Ok(SplitResult {
        train,
        dev,
        random_test,
        user_test,
        temporal_test,
        manifest,
    })
}
