//! Synthetic latents, sparse task weights, and regression tasks.
//!
//! Three latent families are supported: Gaussian with `Σᵢⱼ = base^|i−j|`,
//! equicorrelated Gaussian `Σᵢⱼ = ρ + 1(i=j)(1−ρ)`, and a factor grid with
//! jittered points weighted by an equicorrelated Gaussian density (the
//! desk-scale stand-in for the 3D Shapes factors).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, dot};
use crate::rng::RngStream;

/// Factor cardinalities of 3D Shapes: floor, wall and object hue, scale,
/// shape, orientation.
pub const SHAPES3D_LEVELS: [usize; 6] = [10, 10, 10, 8, 4, 15];

const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentKind {
    /// `Σᵢⱼ = base^|i−j|`
    ArDecay { base: f64 },
    /// `Σᵢⱼ = ρ + 1(i=j)(1−ρ)`
    Equicorrelated { rho: f64 },
    /// Finite factor grid. Each point is jittered once by a uniform offset of
    /// at most `noise_alpha · Δzⱼ / 2` per coordinate, then sampled with
    /// probability proportional to the equicorrelated Gaussian density.
    Grid {
        levels: Vec<usize>,
        noise_alpha: f64,
        rho: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub m: usize,
    #[serde(flatten)]
    pub kind: LatentKind,
    pub standardize: bool,
}

impl LatentSpec {
    pub fn ar_decay(m: usize, base: f64) -> Self {
        LatentSpec {
            m,
            kind: LatentKind::ArDecay { base },
            standardize: true,
        }
    }

    pub fn equicorrelated(m: usize, rho: f64) -> Self {
        LatentSpec {
            m,
            kind: LatentKind::Equicorrelated { rho },
            standardize: true,
        }
    }

    /// The six 3D Shapes factors, standardized.
    pub fn shapes3d(noise_alpha: f64, rho: f64) -> Self {
        LatentSpec {
            m: SHAPES3D_LEVELS.len(),
            kind: LatentKind::Grid {
                levels: SHAPES3D_LEVELS.to_vec(),
                noise_alpha,
                rho,
            },
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("latent dimension must be >= 1".into()));
        }
        match &self.kind {
            LatentKind::ArDecay { base } => {
                if !(*base > 0.0 && *base < 1.0) {
                    return Err(Error::InvalidArgument(format!("ar base {base} outside (0,1)")));
                }
            }
            LatentKind::Equicorrelated { rho } => check_rho(*rho)?,
            LatentKind::Grid {
                levels,
                noise_alpha,
                rho,
            } => {
                check_rho(*rho)?;
                if levels.len() != self.m {
                    return Err(Error::InvalidArgument(format!(
                        "{} grid factors for m={}",
                        levels.len(),
                        self.m
                    )));
                }
                if levels.iter().any(|&l| l < 2) {
                    return Err(Error::InvalidArgument("every grid factor needs >= 2 levels".into()));
                }
                if !(0.0..=1.0).contains(noise_alpha) {
                    return Err(Error::InvalidArgument(format!(
                        "noise_alpha {noise_alpha} outside [0,1]"
                    )));
                }
                let total = levels
                    .iter()
                    .try_fold(1usize, |acc, &l| acc.checked_mul(l))
                    .unwrap_or(usize::MAX);
                if total > MAX_GRID_POINTS {
                    return Err(Error::InvalidArgument(format!(
                        "grid has {total} points, limit is {MAX_GRID_POINTS}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside [0,1)")));
    }
    Ok(())
}

/// `Σᵢⱼ = ρ + 1(i=j)(1−ρ)`.
pub fn equicorrelated_cov(m: usize, rho: f64) -> Matrix {
    Matrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho })
}

/// `Σᵢⱼ = base^|i−j|`.
pub fn ar_decay_cov(m: usize, base: f64) -> Matrix {
    Matrix::from_fn(m, m, |i, j| base.powi((i as i32 - j as i32).abs()))
}

/// Jittered grid with cached categorical weights.
#[derive(Clone, Debug)]
struct GridTable {
    m: usize,
    /// points, row-major n_points × m
    points: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GridTable {
    fn build(levels: &[usize], noise_alpha: f64, rho: f64, standardize: bool, rng: &mut RngStream) -> Result<Self> {
        let m = levels.len();
        let values: Vec<Vec<f64>> = levels
            .iter()
            .enumerate()
            .map(|(f, &l)| factor_values(f, l, levels == SHAPES3D_LEVELS, standardize))
            .collect();
        let gaps: Vec<f64> = values.iter().map(|v| v[1] - v[0]).collect();
        let total: usize = levels.iter().product();
        let mut points = Vec::with_capacity(total * m);
        let mut idx = vec![0usize; m];
        for _ in 0..total {
            for f in 0..m {
                let half = noise_alpha * gaps[f] / 2.0;
                let offset = if half > 0.0 { rng.uniform_range(-half, half) } else { 0.0 };
                points.push(values[f][idx[f]] + offset);
            }
            // mixed-radix increment, last factor fastest
            for f in (0..m).rev() {
                idx[f] += 1;
                if idx[f] < levels[f] {
                    break;
                }
                idx[f] = 0;
            }
        }
        let precision = equicorrelated_cov(m, rho).inverse()?;
        let mut cumulative = Vec::with_capacity(total);
        let mut acc = 0.0;
        for p in points.chunks_exact(m) {
            let q = dot(p, &precision.matvec(p));
            acc += (-0.5 * q).exp();
            cumulative.push(acc);
        }
        Ok(GridTable {
            m,
            points,
            cumulative,
        })
    }

    fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let total = *self.cumulative.last().expect("nonempty grid");
        let u = rng.uniform() * total;
        let k = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1);
        out.copy_from_slice(&self.points[k * self.m..(k + 1) * self.m]);
    }
}

/// Level values of one factor. The 3D Shapes grid uses the dataset's native
/// ranges; any other grid uses evenly spaced values on `[0, 1]`. With
/// `standardize`, values are shifted and scaled to mean 0 and variance 1
/// under the uniform distribution over levels.
fn factor_values(factor: usize, levels: usize, shapes3d: bool, standardize: bool) -> Vec<f64> {
    let (lo, hi) = if shapes3d {
        match factor {
            4 => (0.0, 3.0),
            5 => (-30.0, 30.0),
            _ => (0.0, 1.0),
        }
    } else {
        (0.0, 1.0)
    };
    let mut v: Vec<f64> = (0..levels)
        .map(|i| lo + (hi - lo) * i as f64 / (levels - 1) as f64)
        .collect();
    if standardize {
        let mean = v.iter().sum::<f64>() / levels as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / levels as f64;
        let sd = var.sqrt();
        v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
    v
}

/// Latent sampler with any per-run state (Cholesky factor, jittered grid)
/// built once.
#[derive(Clone, Debug)]
pub struct LatentSampler {
    spec: LatentSpec,
    chol: Option<Matrix>,
    grid: Option<GridTable>,
}

impl LatentSampler {
    /// `rng` is consumed only by the grid jitter, which is drawn once here.
    pub fn new(spec: &LatentSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let (chol, grid) = match &spec.kind {
            LatentKind::ArDecay { base } => (Some(ar_decay_cov(spec.m, *base).cholesky()?), None),
            LatentKind::Equicorrelated { rho } => {
                (Some(equicorrelated_cov(spec.m, *rho).cholesky()?), None)
            }
            LatentKind::Grid {
                levels,
                noise_alpha,
                rho,
            } => (
                None,
                Some(GridTable::build(levels, *noise_alpha, *rho, spec.standardize, rng)?),
            ),
        };
        Ok(LatentSampler {
            spec: spec.clone(),
            chol,
            grid,
        })
    }

    pub fn spec(&self) -> &LatentSpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Matrix {
        let m = self.spec.m;
        let mut z = Matrix::zeros(n, m);
        if let Some(grid) = &self.grid {
            for i in 0..n {
                grid.sample_into(rng, z.row_mut(i));
            }
            return z;
        }
        let l = self.chol.as_ref().expect("gaussian sampler has a factor");
        let mut g = vec![0.0; m];
        for i in 0..n {
            g.iter_mut().for_each(|v| *v = rng.normal());
            let row = z.row_mut(i);
            for a in 0..m {
                row[a] = (0..=a).map(|b| l[(a, b)] * g[b]).sum();
            }
        }
        z
    }
}

/// One-shot latent sampling; grid jitter comes from a child of `rng`.
pub fn sample_latents(spec: &LatentSpec, n: usize, rng: &mut RngStream) -> Result<Matrix> {
    let mut jitter = rng.child_named("grid-jitter");
    let sampler = LatentSampler::new(spec, &mut jitter)?;
    Ok(sampler.sample(n, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportSpec {
    /// Independent Bernoulli(p) mask; an empty draw is redrawn.
    Bernoulli { p: f64 },
    /// Uniform choice among a partition of the features (0-based indices).
    Blocks { blocks: Vec<Vec<usize>> },
    /// Every feature active.
    Full,
    /// Dense Laplace(mu, b) weights, no mask.
    LaplaceDense { mu: f64, b: f64 },
    /// Exactly `count` features, chosen uniformly.
    FixedSize { count: usize },
}

impl SupportSpec {
    /// Contiguous blocks of `size` over `m` features.
    pub fn contiguous_blocks(m: usize, size: usize) -> Self {
        let blocks = (0..m).collect::<Vec<_>>().chunks(size).map(|c| c.to_vec()).collect();
        SupportSpec::Blocks { blocks }
    }

    /// `round(ratio · m)` active features, at least one.
    pub fn fraction(m: usize, ratio: f64) -> Self {
        SupportSpec::FixedSize {
            count: ((ratio * m as f64).round() as usize).clamp(1, m),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            SupportSpec::Bernoulli { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::InvalidArgument(format!("bernoulli p {p} outside (0,1]")));
                }
            }
            SupportSpec::Blocks { blocks } => {
                let mut seen = vec![false; m];
                for &j in blocks.iter().flatten() {
                    if j >= m || seen[j] {
                        return Err(Error::InvalidArgument(format!(
                            "blocks do not partition 0..{m}"
                        )));
                    }
                    seen[j] = true;
                }
                if seen.iter().any(|s| !s) || blocks.iter().any(|b| b.is_empty()) {
                    return Err(Error::InvalidArgument(format!("blocks do not partition 0..{m}")));
                }
            }
            SupportSpec::Full => {}
            SupportSpec::LaplaceDense { b, .. } => {
                if !(*b > 0.0) {
                    return Err(Error::InvalidArgument(format!("laplace scale {b} must be > 0")));
                }
            }
            SupportSpec::FixedSize { count } => {
                if *count == 0 || *count > m {
                    return Err(Error::InvalidArgument(format!("support size {count} for m={m}")));
                }
            }
        }
        Ok(())
    }
}

/// Draws `w = w̄ ⊙ s` with `w̄ ~ N(0, I)` and the mask `s` from `spec`.
/// Returns the weights and the (sorted) support.
pub fn sample_task_weight(spec: &SupportSpec, m: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<usize>) {
    let mask: Vec<usize> = match spec {
        SupportSpec::Bernoulli { p } => loop {
            let s: Vec<usize> = (0..m).filter(|_| rng.bernoulli(*p)).collect();
            if !s.is_empty() {
                break s;
            }
        },
        SupportSpec::Blocks { blocks } => {
            let mut b = blocks[rng.below(blocks.len())].clone();
            b.sort_unstable();
            b
        }
        SupportSpec::Full => (0..m).collect(),
        SupportSpec::FixedSize { count } => rng.sample_indices(m, *count),
        SupportSpec::LaplaceDense { mu, b } => {
            let w: Vec<f64> = (0..m).map(|_| rng.laplace(*mu, *b)).collect();
            let support = (0..m).filter(|&j| w[j] != 0.0).collect();
            return (w, support);
        }
    };
    let mut w = vec![0.0; m];
    for &j in &mask {
        // a Gaussian draw of exactly 0.0 has probability zero, but keep the
        // support consistent with the nonzeros regardless
        let mut v = rng.normal();
        while v == 0.0 {
            v = rng.normal();
        }
        w[j] = v;
    }
    (w, mask)
}

/// One regression task. `x` is what a learner observes: equal to `f_true`
/// until [`entangle`] mixes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub f_true: Matrix,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub w_true: Vec<f64>,
    pub support_true: Vec<usize>,
    pub noise_sigma: f64,
}

impl TaskDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.f_true.cols()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Deterministic split by index: the last `round(frac · n)` samples are
    /// held out. Both parts keep at least one sample.
    pub fn split(&self, held_out_frac: f64) -> (TaskDataset, TaskDataset) {
        let n = self.n();
        let n_val = ((held_out_frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let n_train = n - n_val;
        let train: Vec<usize> = (0..n_train).collect();
        let val: Vec<usize> = (n_train..n).collect();
        (self.subset(&train), self.subset(&val))
    }

    pub fn subset(&self, idx: &[usize]) -> TaskDataset {
        TaskDataset {
            f_true: self.f_true.select_rows(idx),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            w_true: self.w_true.clone(),
            support_true: self.support_true.clone(),
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Samples latents, a sparse weight, and `y = F w + ε`, `ε ~ N(0, σ²)`.
pub fn make_task(
    latent: &LatentSampler,
    support: &SupportSpec,
    n: usize,
    noise_sigma: f64,
    rng: &mut RngStream,
) -> Result<TaskDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("a task needs at least one sample".into()));
    }
    let m = latent.m();
    support.validate(m)?;
    let (w, s) = sample_task_weight(support, m, rng);
    Ok(task_with_weight(latent, w, s, n, noise_sigma, rng))
}

/// Like [`make_task`] but with a caller-supplied weight vector.
pub fn task_with_weight(
    latent: &LatentSampler,
    w: Vec<f64>,
    support: Vec<usize>,
    n: usize,
    noise_sigma: f64,
    rng: &mut RngStream,
) -> TaskDataset {
    let z = latent.sample(n, rng);
    let mut y = z.matvec(&w);
    if noise_sigma > 0.0 {
        y.iter_mut().for_each(|v| *v += noise_sigma * rng.normal());
    }
    TaskDataset {
        x: z.clone(),
        f_true: z,
        y,
        w_true: w,
        support_true: support,
        noise_sigma,
    }
}

/// Replaces every task's observations by `X = F_true Lᵀ`.
pub fn entangle(tasks: &mut [TaskDataset], l: &Matrix) -> Result<()> {
    if !l.is_square() {
        return Err(Error::Shape("mixing matrix must be square".into()));
    }
    let cond = l.condition_number();
    if !(cond < 1e12) {
        return Err(Error::Singular(format!("mixing matrix condition number {cond:e}")));
    }
    for t in tasks.iter_mut() {
        if t.m() != l.cols() {
            return Err(Error::Shape(format!(
                "mixing is {}x{}, task has m={}",
                l.rows(),
                l.cols(),
                t.m()
            )));
        }
        t.x = t.f_true.matmul_t(l);
    }
    Ok(())
}

pub const BUNDLE_FORMAT: &str = "spardis-task-bundle/1";

/// JSON manifest stored next to the per-task CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub seed: u64,
    pub m: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub latent: Option<LatentSpec>,
    pub support: Option<SupportSpec>,
    /// Mixing matrix rows, when the observations are entangled.
    pub mixing: Option<Vec<Vec<f64>>>,
    pub tasks: Vec<BundleTask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleTask {
    pub file: String,
    pub n: usize,
    pub w_true: Vec<f64>,
    pub support_true: Vec<usize>,
}

/// Writes `manifest.json` plus `task_NNNN.csv` files (columns
/// `f1..fm, x1..xd, y`) into `dir`.
pub fn write_bundle(
    dir: &Path,
    tasks: &[TaskDataset],
    seed: u64,
    latent: Option<&LatentSpec>,
    support: Option<&SupportSpec>,
    mixing: Option<&Matrix>,
) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (m, d) = tasks.first().map_or((0, 0), |t| (t.m(), t.d()));
    let noise_sigma = tasks.first().map_or(0.0, |t| t.noise_sigma);
    let mut entries = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        let file = format!("task_{t:04}.csv");
        let path = dir.join(&file);
        let mut wtr = csv::Writer::from_path(&path)?;
        let mut header: Vec<String> = (1..=m).map(|j| format!("f{j}")).collect();
        header.extend((1..=d).map(|j| format!("x{j}")));
        header.push("y".into());
        wtr.write_record(&header)?;
        for i in 0..task.n() {
            let rec: Vec<String> = task
                .f_true
                .row(i)
                .iter()
                .chain(task.x.row(i))
                .chain(std::iter::once(&task.y[i]))
                .map(|v| v.to_string())
                .collect();
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(&path, e))?;
        entries.push(BundleTask {
            file,
            n: task.n(),
            w_true: task.w_true.clone(),
            support_true: task.support_true.clone(),
        });
    }
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        seed,
        m,
        d,
        noise_sigma,
        latent: latent.cloned(),
        support: support.cloned(),
        mixing: mixing.map(|l| (0..l.rows()).map(|i| l.row(i).to_vec()).collect()),
        tasks: entries,
    };
    let path = dir.join("manifest.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_bundle(dir: &Path) -> Result<(BundleManifest, Vec<TaskDataset>)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(Error::Format {
            path,
            reason: format!("unknown format {:?}", manifest.format),
        });
    }
    let (m, d) = (manifest.m, manifest.d);
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for entry in &manifest.tasks {
        let path = dir.join(&entry.file);
        let mut rdr = csv::Reader::from_path(&path)?;
        let mut f = Vec::with_capacity(entry.n * m);
        let mut x = Vec::with_capacity(entry.n * d);
        let mut y = Vec::with_capacity(entry.n);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != m + d + 1 {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: format!("expected {} columns, found {}", m + d + 1, rec.len()),
                });
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Format {
                    path: path.clone(),
                    reason: format!("not a number: {field:?}"),
                })?;
                if c < m {
                    f.push(v);
                } else if c < m + d {
                    x.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        if y.len() != entry.n {
            return Err(Error::Format {
                path,
                reason: format!("manifest says {} rows, file has {}", entry.n, y.len()),
            });
        }
        tasks.push(TaskDataset {
            f_true: Matrix::from_vec(entry.n, m, f)?,
            x: Matrix::from_vec(entry.n, d, x)?,
            y,
            w_true: entry.w_true.clone(),
            support_true: entry.support_true.clone(),
            noise_sigma: manifest.noise_sigma,
        });
    }
    Ok((manifest, tasks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, sample_orthogonal};

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn ar_decay_correlation() {
        let mut rng = RngStream::new(1);
        let z = sample_latents(&LatentSpec::ar_decay(5, 0.9), 10_000, &mut rng).unwrap();
        let c13 = corr(&z.col(0), &z.col(2));
        assert!((c13 - 0.81).abs() <= 0.05, "corr {c13}");
    }

    #[test]
    fn uncorrelated_at_rho_zero() {
        let mut rng = RngStream::new(2);
        let z = sample_latents(&LatentSpec::equicorrelated(4, 0.0), 10_000, &mut rng).unwrap();
        for a in 0..4 {
            for b in (a + 1)..4 {
                assert!(corr(&z.col(a), &z.col(b)).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn equicorrelated_cov_is_psd() {
        for rho in [0.0, 0.3, 0.9, 0.999] {
            assert!(equicorrelated_cov(6, rho).cholesky().is_ok());
        }
    }

    #[test]
    fn grid_without_noise_stays_on_levels() {
        let spec = LatentSpec {
            m: 3,
            kind: LatentKind::Grid {
                levels: vec![3, 4, 5],
                noise_alpha: 0.0,
                rho: 0.5,
            },
            standardize: false,
        };
        let mut rng = RngStream::new(3);
        let z = sample_latents(&spec, 500, &mut rng).unwrap();
        for (f, &l) in [3usize, 4, 5].iter().enumerate() {
            let allowed: Vec<f64> = (0..l).map(|i| i as f64 / (l - 1) as f64).collect();
            for v in z.col(f) {
                assert!(allowed.contains(&v), "{v} not a level of factor {f}");
            }
        }
    }

    #[test]
    fn grid_jitter_bounded_by_half_gap() {
        let levels = vec![4, 6];
        let alpha = 0.7;
        let spec = LatentSpec {
            m: 2,
            kind: LatentKind::Grid {
                levels: levels.clone(),
                noise_alpha: alpha,
                rho: 0.0,
            },
            standardize: false,
        };
        let mut rng = RngStream::new(4);
        let sampler = LatentSampler::new(&spec, &mut rng).unwrap();
        let grid = sampler.grid.as_ref().unwrap();
        for p in grid.points.chunks_exact(2) {
            for (f, &l) in levels.iter().enumerate() {
                let gap = 1.0 / (l - 1) as f64;
                let nearest = (p[f] / gap).round() * gap;
                assert!((p[f] - nearest).abs() <= alpha * gap / 2.0 + 1e-15);
            }
        }
    }

    #[test]
    fn grid_sampling_is_cached_and_deterministic() {
        let spec = LatentSpec::shapes3d(1.0, 0.5);
        let mut r1 = RngStream::new(5);
        let mut r2 = RngStream::new(5);
        let a = sample_latents(&spec, 50, &mut r1).unwrap();
        let b = sample_latents(&spec, 50, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shapes3d_factors_standardized() {
        for (f, &l) in SHAPES3D_LEVELS.iter().enumerate() {
            let v = factor_values(f, l, true, true);
            let mean = v.iter().sum::<f64>() / l as f64;
            let var = v.iter().map(|x| x * x).sum::<f64>() / l as f64;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_grid_rejected() {
        let spec = LatentSpec {
            m: 3,
            kind: LatentKind::Grid {
                levels: vec![101, 100, 100],
                noise_alpha: 0.0,
                rho: 0.0,
            },
            standardize: true,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn support_specs() {
        let mut rng = RngStream::new(6);
        let (w, s) = sample_task_weight(&SupportSpec::Bernoulli { p: 1.0 }, 5, &mut rng);
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert!(w.iter().all(|&v| v != 0.0));

        let blocks = SupportSpec::contiguous_blocks(6, 2);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            let (w, s) = sample_task_weight(&blocks, 6, &mut rng);
            assert_eq!(s.len(), 2);
            assert_eq!(s[1], s[0] + 1);
            assert_eq!(s[0] % 2, 0);
            counts[s[0] / 2] += 1;
            let nz: Vec<usize> = (0..6).filter(|&j| w[j] != 0.0).collect();
            assert_eq!(nz, s);
        }
        for c in counts {
            assert!((c as f64 / 3000.0 - 1.0 / 3.0).abs() < 0.04);
        }

        let (_, s) = sample_task_weight(&SupportSpec::LaplaceDense { mu: 0.0, b: 1.0 }, 7, &mut rng);
        assert_eq!(s, (0..7).collect::<Vec<_>>());

        let spec = SupportSpec::fraction(100, 0.05);
        let (_, s) = sample_task_weight(&spec, 100, &mut rng);
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn bernoulli_support_rate() {
        let mut rng = RngStream::new(7);
        let m = 6;
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|_| sample_task_weight(&SupportSpec::Bernoulli { p: 0.5 }, m, &mut rng).1.len())
            .sum();
        // conditioning on a nonempty support lifts the mean to 0.5 / (1 − 2⁻⁶)
        let rate = total as f64 / (draws * m) as f64;
        let expected = 0.5 / (1.0 - 0.5f64.powi(6));
        assert!((rate - expected).abs() <= 0.03, "rate {rate}");
        assert!((rate - 0.5).abs() <= 0.03, "rate {rate}");
    }

    #[test]
    fn invalid_blocks_rejected() {
        let bad = SupportSpec::Blocks { blocks: vec![vec![0, 1], vec![1, 2]] };
        assert!(bad.validate(3).is_err());
        let missing = SupportSpec::Blocks { blocks: vec![vec![0, 1]] };
        assert!(missing.validate(3).is_err());
    }

    #[test]
    fn noiseless_task_with_unit_weight() {
        let mut rng = RngStream::new(8);
        let sampler = LatentSampler::new(&LatentSpec::equicorrelated(3, 0.2), &mut rng).unwrap();
        let t = task_with_weight(&sampler, vec![1.0, 0.0, 0.0], vec![0], 20, 0.0, &mut rng);
        assert_eq!(t.y, t.f_true.col(0));
    }

    #[test]
    fn ols_recovers_weights() {
        let mut rng = RngStream::new(9);
        let sampler = LatentSampler::new(&LatentSpec::ar_decay(6, 0.9), &mut rng).unwrap();
        let t = make_task(&sampler, &SupportSpec::Bernoulli { p: 0.5 }, 5000, 0.2, &mut rng).unwrap();
        let w = crate::linalg::lstsq(&t.f_true, &t.y).unwrap();
        for (a, b) in w.iter().zip(&t.w_true) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn entangle_identity_and_orthogonal() {
        let mut rng = RngStream::new(10);
        let sampler = LatentSampler::new(&LatentSpec::equicorrelated(4, 0.0), &mut rng).unwrap();
        let t = make_task(&sampler, &SupportSpec::Full, 30, 0.1, &mut rng).unwrap();
        let mut tasks = vec![t.clone()];
        entangle(&mut tasks, &Matrix::identity(4)).unwrap();
        assert_eq!(tasks[0].x, t.f_true);
        let q = sample_orthogonal(4, &mut rng);
        entangle(&mut tasks, &q).unwrap();
        for i in 0..30 {
            assert!((norm(tasks[0].x.row(i)) - norm(t.f_true.row(i))).abs() < 1e-12);
        }
        assert_eq!(tasks[0].y, t.y);
        let singular = Matrix::from_diag(&[1.0, 1.0, 1.0, 0.0]);
        assert!(entangle(&mut tasks, &singular).is_err());
    }

    #[test]
    fn split_is_by_index() {
        let mut rng = RngStream::new(11);
        let sampler = LatentSampler::new(&LatentSpec::equicorrelated(2, 0.0), &mut rng).unwrap();
        let t = make_task(&sampler, &SupportSpec::Full, 10, 0.1, &mut rng).unwrap();
        let (tr, va) = t.split(0.5);
        assert_eq!(tr.n(), 5);
        assert_eq!(va.n(), 5);
        assert_eq!(va.y[0], t.y[5]);
    }
}
