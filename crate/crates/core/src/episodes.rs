//! Class pools, meta-splits and episodic Active Learning problems.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples of one class. `sample_ids[i]` identifies `samples[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPool {
    pub class_id: u32,
    /// The group ("alphabet") this class belongs to.
    pub group_id: u32,
    pub sample_ids: Vec<u64>,
    pub samples: Vec<Vec<f64>>,
}

impl ClassPool {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(Vec::len)
    }
}

/// Checks pool invariants and returns the shared feature dimension.
pub fn validate_pools(pools: &[ClassPool]) -> Result<usize> {
    let dim = pools
        .iter()
        .find_map(ClassPool::dim)
        .ok_or_else(|| Error::InvalidArgument("no samples in any pool".into()))?;
    let mut seen = HashSet::new();
    for p in pools {
        if !seen.insert(p.class_id) {
            return Err(Error::InvalidArgument(format!("duplicate class id {}", p.class_id)));
        }
        if p.sample_ids.len() != p.samples.len() {
            return Err(Error::InvalidArgument(format!("class {}: id/sample count mismatch", p.class_id)));
        }
        if let Some(s) = p.samples.iter().find(|s| s.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "class {}: sample of dimension {} in a dataset of dimension {dim}",
                p.class_id,
                s.len()
            )));
        }
    }
    Ok(dim)
}

/// Parameters of the isotropic Gaussian cluster generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_groups: usize,
    pub classes_per_group: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub intra_class_std: f64,
    pub inter_class_spread: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_groups: 50,
            classes_per_group: 20,
            samples_per_class: 40,
            dim: 2,
            intra_class_std: 1.0,
            inter_class_spread: 4.0,
        }
    }
}

/// One Gaussian cluster per class; class means are uniform in
/// `[0, inter_class_spread]^dim`, drawn independently for every group.
pub fn generate_synthetic_pools(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<ClassPool>> {
    if cfg.n_groups == 0 || cfg.classes_per_group == 0 || cfg.samples_per_class == 0 {
        return Err(Error::InvalidArgument("synthetic counts must be at least 1".into()));
    }
    if cfg.dim < 2 {
        return Err(Error::InvalidArgument(format!("dimension must be at least 2, got {}", cfg.dim)));
    }
    if !(cfg.intra_class_std > 0.0) || !(cfg.inter_class_spread >= 0.0) {
        return Err(Error::InvalidArgument("intra_class_std must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.intra_class_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut pools = Vec::with_capacity(cfg.n_groups * cfg.classes_per_group);
    let mut next_sample = 0u64;
    for g in 0..cfg.n_groups {
        for c in 0..cfg.classes_per_group {
            let mean: Vec<f64> = (0..cfg.dim)
                .map(|_| rng.random::<f64>() * cfg.inter_class_spread)
                .collect();
            let samples: Vec<Vec<f64>> = (0..cfg.samples_per_class)
                .map(|_| mean.iter().map(|m| m + noise.sample(&mut rng)).collect())
                .collect();
            let sample_ids = (next_sample..next_sample + samples.len() as u64).collect();
            next_sample += samples.len() as u64;
            pools.push(ClassPool {
                class_id: (g * cfg.classes_per_group + c) as u32,
                group_id: g as u32,
                sample_ids,
                samples,
            });
        }
    }
    Ok(pools)
}

/// Reads the embedding CSV format: header
/// `sample_id,class_id,group_id,f0,...,f{F-1}`, one row per sample. Lines
/// starting with `#` are comments.
pub fn load_embedding_pools(path: &Path) -> Result<Vec<ClassPool>> {
    let data_err = |row: usize, msg: String| Error::Data {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| data_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyData { path: path.to_path_buf() });
    }
    let expected = ["sample_id", "class_id", "group_id"];
    if headers.len() < 4 || headers.iter().take(3).ne(expected.iter().copied()) {
        return Err(data_err(1, format!("expected header sample_id,class_id,group_id,f0,..., got {:?}", headers)));
    }

    let mut by_class: BTreeMap<u32, ClassPool> = BTreeMap::new();
    let mut seen: HashSet<(u32, u64)> = HashSet::new();
    let mut dim = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| data_err(rows + 2, e.to_string()))?;
        let row = record.position().map_or(rows + 2, |p| p.line() as usize);
        rows += 1;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let sample_id: u64 = field(0)
            .parse()
            .map_err(|_| data_err(row, format!("invalid sample_id `{}`", field(0))))?;
        let class_id: u32 = field(1)
            .parse()
            .map_err(|_| data_err(row, format!("invalid class_id `{}`", field(1))))?;
        let group_id: u32 = field(2)
            .parse()
            .map_err(|_| data_err(row, format!("invalid group_id `{}`", field(2))))?;
        let features = (3..record.len())
            .map(|i| {
                field(i)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| data_err(row, format!("non-numeric feature `{}` in column {}", field(i), i)))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(data_err(row, format!("expected {d} features, found {}", features.len())));
            }
            _ => {}
        }
        if !seen.insert((class_id, sample_id)) {
            return Err(data_err(row, format!("duplicate sample {sample_id} in class {class_id}")));
        }
        let pool = by_class.entry(class_id).or_insert_with(|| ClassPool {
            class_id,
            group_id,
            sample_ids: Vec::new(),
            samples: Vec::new(),
        });
        if pool.group_id != group_id {
            return Err(data_err(row, format!("class {class_id} listed under groups {} and {group_id}", pool.group_id)));
        }
        pool.sample_ids.push(sample_id);
        pool.samples.push(features);
    }
    if rows == 0 {
        return Err(Error::EmptyData { path: path.to_path_buf() });
    }
    Ok(by_class.into_values().collect())
}

/// Writes pools in the embedding CSV format, optionally preceded by a
/// `# ` comment line.
pub fn write_embedding_pools<W: Write>(out: W, pools: &[ClassPool], comment: Option<&str>) -> Result<()> {
    let dim = validate_pools(pools)?;
    let mut out = std::io::BufWriter::new(out);
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut header = String::from("sample_id,class_id,group_id");
    for f in 0..dim {
        header.push_str(&format!(",f{f}"));
    }
    writeln!(out, "{header}")?;
    for p in pools {
        for (id, s) in p.sample_ids.iter().zip(&p.samples) {
            write!(out, "{id},{},{}", p.class_id, p.group_id)?;
            for v in s {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Meta-stage a problem is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    MetaTrain,
    MetaVal,
    MetaTest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::MetaTrain => "metatrain",
            Stage::MetaVal => "metaval",
            Stage::MetaTest => "metatest",
        })
    }
}

/// Disjoint class universes for the three meta-stages, assigned per group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSplit {
    pub train: BTreeSet<u32>,
    pub val: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
    pub train_groups: Vec<u32>,
    pub val_groups: Vec<u32>,
    pub test_groups: Vec<u32>,
}

impl MetaSplit {
    pub fn classes(&self, stage: Stage) -> &BTreeSet<u32> {
        match stage {
            Stage::MetaTrain => &self.train,
            Stage::MetaVal => &self.val,
            Stage::MetaTest => &self.test,
        }
    }

    pub fn groups(&self, stage: Stage) -> &[u32] {
        match stage {
            Stage::MetaTrain => &self.train_groups,
            Stage::MetaVal => &self.val_groups,
            Stage::MetaTest => &self.test_groups,
        }
    }
}

/// Shuffles groups by `seed` and partitions them by `fractions`
/// (train, val, test). All classes of a group land in the same meta-set.
pub fn split_classes(pools: &[ClassPool], fractions: [f64; 3], seed: u64) -> Result<MetaSplit> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let groups: Vec<u32> = pools.iter().map(|p| p.group_id).collect::<BTreeSet<_>>().into_iter().collect();
    let n = groups.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if n < 3 || n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} groups cannot be split by {fractions:?} with at least one group per meta-set"
        )));
    }
    let mut shuffled = groups;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_groups, rest) = shuffled.split_at(n_train);
    let (val_groups, test_groups) = rest.split_at(n_val);
    let collect = |gs: &[u32]| -> BTreeSet<u32> {
        let gs: HashSet<u32> = gs.iter().copied().collect();
        pools.iter().filter(|p| gs.contains(&p.group_id)).map(|p| p.class_id).collect()
    };
    let sorted = |gs: &[u32]| {
        let mut v = gs.to_vec();
        v.sort_unstable();
        v
    };
    Ok(MetaSplit {
        train: collect(train_groups),
        val: collect(val_groups),
        test: collect(test_groups),
        train_groups: sorted(train_groups),
        val_groups: sorted(val_groups),
        test_groups: sorted(test_groups),
    })
}

/// Problem dimensions: `k` classes, `n` unlabeled train samples, `m` test
/// samples, budget `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub b: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { k: 2, n: 15, m: 30, b: 2 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.b == 0 || self.b > self.n || self.m < self.k {
            return Err(Error::InvalidArgument(format!(
                "episode config requires k >= 1, 1 <= b <= n and m >= k, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One Active Learning problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub k: usize,
    pub b: usize,
    /// Unlabeled train pool, `n x F`.
    pub train: Vec<Vec<f64>>,
    /// Test features, `m x F`.
    pub test: Vec<Vec<f64>>,
    /// Test labels in `[0, k)`.
    pub test_labels: Vec<usize>,
    /// Local label `j` corresponds to original class `classes[j]`.
    pub classes: Vec<u32>,
    pub group_id: u32,
    oracle_labels: Vec<usize>,
    /// `(class_id, sample_id)` of every train and test sample.
    train_origin: Vec<(u32, u64)>,
    test_origin: Vec<(u32, u64)>,
}

impl Episode {
    /// Builds an episode from explicit parts; used for fixtures and by
    /// loaders that bring their own problems.
    pub fn from_parts(
        k: usize,
        b: usize,
        train: Vec<Vec<f64>>,
        oracle_labels: Vec<usize>,
        test: Vec<Vec<f64>>,
        test_labels: Vec<usize>,
    ) -> Result<Self> {
        let classes = (0..k as u32).collect();
        let train_origin = oracle_labels.iter().enumerate().map(|(i, &l)| (l as u32, i as u64)).collect();
        let test_origin = test_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l as u32, (train.len() + i) as u64))
            .collect();
        let ep = Self {
            k,
            b,
            train,
            test,
            test_labels,
            classes,
            group_id: 0,
            oracle_labels,
            train_origin,
            test_origin,
        };
        ep.check()?;
        Ok(ep)
    }

    pub fn n(&self) -> usize {
        self.train.len()
    }

    pub fn m(&self) -> usize {
        self.test.len()
    }

    pub fn dim(&self) -> usize {
        self.train.first().map_or(0, Vec::len)
    }

    /// Queries the oracle for the labels of the selected train samples.
    pub fn reveal(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.oracle_labels[i]).collect()
    }

    /// All hidden train labels. For the exhaustive oracle and evaluation
    /// only; selection policies must go through [`Episode::reveal`].
    pub fn oracle_labels(&self) -> &[usize] {
        &self.oracle_labels
    }

    /// Per-class counts of the train pool.
    pub fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.oracle_labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn train_origin(&self) -> &[(u32, u64)] {
        &self.train_origin
    }

    pub fn test_origin(&self) -> &[(u32, u64)] {
        &self.test_origin
    }

    /// Verifies label ranges, budget, train/test disjointness and test-class coverage.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.b == 0 || self.b > self.n() {
            return bad(format!("budget {} outside [1, {}]", self.b, self.n()));
        }
        if self.oracle_labels.len() != self.n() || self.test_labels.len() != self.m() {
            return bad("label count does not match sample count".into());
        }
        if self.oracle_labels.iter().chain(&self.test_labels).any(|&l| l >= self.k) {
            return bad(format!("label outside [0, {})", self.k));
        }
        let mut covered = vec![false; self.k];
        for &l in &self.test_labels {
            covered[l] = true;
        }
        if let Some(c) = covered.iter().position(|c| !c) {
            return bad(format!("class {c} missing from the test set"));
        }
        let train: HashSet<_> = self.train_origin.iter().collect();
        if self.test_origin.iter().any(|o| train.contains(o)) {
            return bad("train and test samples overlap".into());
        }
        let dim = self.dim();
        if self.train.iter().chain(&self.test).any(|x| x.len() != dim) {
            return bad("inconsistent feature dimension".into());
        }
        Ok(())
    }
}

/// Draws episodes from one meta-stage. Every class read is recorded, and
/// reads outside the stage's universe are refused.
pub struct EpisodeSampler<'a> {
    pools: &'a [ClassPool],
    stage: Stage,
    universe: BTreeSet<u32>,
    /// `(group_id, pool indices)` for every group of the stage.
    groups: Vec<(u32, Vec<usize>)>,
    accessed: Mutex<BTreeSet<u32>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(pools: &'a [ClassPool], split: &MetaSplit, stage: Stage) -> Result<Self> {
        let universe = split.classes(stage).clone();
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, p) in pools.iter().enumerate() {
            if universe.contains(&p.class_id) {
                groups.entry(p.group_id).or_default().push(i);
            }
        }
        if groups.is_empty() {
            return Err(Error::InvalidArgument(format!("{stage} universe is empty")));
        }
        Ok(Self {
            pools,
            stage,
            universe,
            groups: groups.into_iter().collect(),
            accessed: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Class ids read so far.
    pub fn accessed_classes(&self) -> BTreeSet<u32> {
        self.accessed.lock().expect("access log").clone()
    }

    fn read(&self, pool_index: usize) -> Result<&'a ClassPool> {
        let pool = &self.pools[pool_index];
        if !self.universe.contains(&pool.class_id) {
            return Err(Error::AccessViolation {
                class_id: pool.class_id,
                stage: self.stage.to_string(),
            });
        }
        self.accessed.lock().expect("access log").insert(pool.class_id);
        Ok(pool)
    }

    /// Samples one episode: a group uniformly among those with at least `k`
    /// classes, `k` of its classes without replacement, then the test and
    /// train samples.
    pub fn sample<R: Rng + ?Sized>(&self, cfg: &EpisodeConfig, rng: &mut R) -> Result<Episode> {
        cfg.validate()?;
        let eligible: Vec<&(u32, Vec<usize>)> = self.groups.iter().filter(|(_, c)| c.len() >= cfg.k).collect();
        if eligible.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no {} group has {} classes",
                self.stage, cfg.k
            )));
        }
        let (group_id, members) = eligible[rng.random_range(0..eligible.len())];
        let chosen: Vec<&ClassPool> = rand::seq::index::sample(rng, members.len(), cfg.k)
            .into_iter()
            .map(|i| self.read(members[i]))
            .collect::<Result<_>>()?;

        let total: usize = chosen.iter().map(|p| p.len()).sum();
        if let Some(empty) = chosen.iter().find(|p| p.is_empty()) {
            return Err(Error::InsufficientSamples {
                class_id: empty.class_id,
                msg: "class has no samples".into(),
            });
        }
        if total < cfg.n + cfg.m {
            let smallest = chosen.iter().min_by_key(|p| p.len()).expect("k >= 1");
            return Err(Error::InsufficientSamples {
                class_id: smallest.class_id,
                msg: format!("{} samples across the chosen classes, need {}", total, cfg.n + cfg.m),
            });
        }

        // Per-class sample orders for this episode.
        let mut orders: Vec<Vec<usize>> = chosen
            .iter()
            .map(|p| {
                let mut o: Vec<usize> = (0..p.len()).collect();
                o.shuffle(rng);
                o
            })
            .collect();

        let test_classes = draw_test_classes(cfg, &chosen, rng)?;
        let mut remaining: Vec<usize> = chosen.iter().map(|p| p.len()).collect();
        for &c in &test_classes {
            remaining[c] -= 1;
        }
        let mut train_classes = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let c = draw_available(&remaining, rng);
            remaining[c] -= 1;
            train_classes.push(c);
        }

        let mut take = |c: usize| -> (Vec<f64>, (u32, u64)) {
            let idx = orders[c].pop().expect("availability checked");
            let p = chosen[c];
            (p.samples[idx].clone(), (p.class_id, p.sample_ids[idx]))
        };
        let (test, test_origin): (Vec<_>, Vec<_>) = test_classes.iter().map(|&c| take(c)).unzip();
        let (train, train_origin): (Vec<_>, Vec<_>) = train_classes.iter().map(|&c| take(c)).unzip();

        let episode = Episode {
            k: cfg.k,
            b: cfg.b,
            train,
            test,
            test_labels: test_classes,
            classes: chosen.iter().map(|p| p.class_id).collect(),
            group_id: *group_id,
            oracle_labels: train_classes,
            train_origin,
            test_origin,
        };
        episode.check()?;
        Ok(episode)
    }

    /// A fixed problem set: `count` episodes from a stream seeded by `seed`.
    pub fn problem_set(&self, cfg: &EpisodeConfig, count: usize, seed: u64) -> Result<Vec<Episode>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(cfg, &mut rng)).collect()
    }
}

fn draw_available<R: Rng + ?Sized>(remaining: &[usize], rng: &mut R) -> usize {
    let open: Vec<usize> = (0..remaining.len()).filter(|&c| remaining[c] > 0).collect();
    open[rng.random_range(0..open.len())]
}

/// Test labels: each draw picks a class uniformly among those with samples
/// left; the whole draw is repeated until every class appears.
fn draw_test_classes<R: Rng + ?Sized>(cfg: &EpisodeConfig, chosen: &[&ClassPool], rng: &mut R) -> Result<Vec<usize>> {
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let mut remaining: Vec<usize> = chosen.iter().map(|p| p.len()).collect();
        let mut counts = vec![0usize; cfg.k];
        let labels: Vec<usize> = (0..cfg.m)
            .map(|_| {
                let c = draw_available(&remaining, rng);
                remaining[c] -= 1;
                counts[c] += 1;
                c
            })
            .collect();
        if counts.iter().all(|&c| c > 0) {
            return Ok(labels);
        }
    }
    Err(Error::InsufficientSamples {
        class_id: chosen[0].class_id,
        msg: format!("could not cover all {} classes in {} test samples", cfg.k, cfg.m),
    })
}
