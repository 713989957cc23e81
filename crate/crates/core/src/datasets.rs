//! Toy 2-D dataset generators (eight Gaussians on a circle, two
//! interleaving moons) and the point-CSV interchange format.

use crate::models::{Dataset, SourceTag};
use crate::rng::{substream, Purpose};
use crate::textio;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// Default circle radius for the eight-Gaussians dataset.
pub const EIGHT_GAUSSIANS_RADIUS: f64 = 2.0;
/// Default per-mode standard deviation for the eight-Gaussians dataset.
pub const EIGHT_GAUSSIANS_STD: f64 = 0.1;
/// Default noise for the two-moons dataset.
pub const TWO_MOONS_NOISE: f64 = 0.1;

/// Which toy distribution to generate.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyKind {
    EightGaussians { radius: f64, std: f64 },
    TwoMoons { noise_std: f64 },
    FromFile { path: PathBuf },
}

/// A dataset request: distribution, size, seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub n: usize,
    pub seed: u64,
}

impl ToySpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("dataset size must be >= 1".into()));
        }
        match &self.kind {
            ToyKind::EightGaussians { radius, std } => {
                if *radius <= 0.0 || *std <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "eight gaussians needs radius > 0 and std > 0, got {radius}, {std}"
                    )));
                }
            }
            ToyKind::TwoMoons { noise_std } => {
                if *noise_std < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "two moons noise_std must be >= 0, got {noise_std}"
                    )));
                }
            }
            ToyKind::FromFile { .. } => {}
        }
        Ok(())
    }
}

/// Generates the dataset described by `spec`, deriving the random stream
/// from `spec.seed`.
pub fn generate(spec: &ToySpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = substream(spec.seed, 0, Purpose::Dataset);
    match &spec.kind {
        ToyKind::EightGaussians { .. } => sample_eight_gaussians(spec, &mut rng),
        ToyKind::TwoMoons { .. } => sample_two_moons(spec, &mut rng),
        ToyKind::FromFile { path } => {
            let data = load_points(path)?;
            if data.len() < spec.n {
                return Err(Error::InvalidInput(format!(
                    "file {} has {} points but {} were requested",
                    path.display(),
                    data.len(),
                    spec.n
                )));
            }
            let rows = (0..spec.n).map(|i| data.point(i).to_vec()).collect();
            Dataset::from_rows(rows, SourceTag::Real)
        }
    }
}

/// Eight isotropic Gaussian modes at angles `2 pi j / 8` on a circle.
///
/// Per point: one uniform mode index, then 2 standard normals.
pub fn sample_eight_gaussians(spec: &ToySpec, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let ToyKind::EightGaussians { radius, std } = spec.kind else {
        return Err(Error::InvalidInput(
            "spec.kind must be EightGaussians".into(),
        ));
    };
    let centers: Vec<(f64, f64)> = (0..8)
        .map(|j| {
            let angle = 2.0 * PI * j as f64 / 8.0;
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect();
    let mut rows = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mode = rng.random_range(0..8usize);
        let (cx, cy) = centers[mode];
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        rows.push(vec![cx + std * zx, cy + std * zy]);
    }
    Dataset::from_rows(rows, SourceTag::Real)
}

/// Two interleaving half-circles: upper moon `(cos t, sin t)`, lower moon
/// `(1 - cos t, 0.5 - sin t)`, `t` uniform on `[0, pi]`, plus isotropic
/// Gaussian noise.
///
/// Per point: one uniform moon choice, one uniform `t`, then 2 normals.
pub fn sample_two_moons(spec: &ToySpec, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let ToyKind::TwoMoons { noise_std } = spec.kind else {
        return Err(Error::InvalidInput("spec.kind must be TwoMoons".into()));
    };
    let mut rows = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let upper = rng.random::<f64>() < 0.5;
        let t = rng.random::<f64>() * PI;
        let (mut x, mut y) = if upper {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        x += noise_std * zx;
        y += noise_std * zy;
        rows.push(vec![x, y]);
    }
    Dataset::from_rows(rows, SourceTag::Real)
}

/// Reads the point-CSV format: header `dim=<d>`, then one comma-separated
/// row per point.
pub fn load_points(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(l))) => l,
        Some((_, Err(e))) => return Err(Error::io(&display, e)),
        None => return Err(Error::InvalidInput(format!("{display}: empty file"))),
    };
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(&display, format!("expected 'dim=<d>' header, got {header:?}")))?;
    if dim == 0 {
        return Err(Error::parse(&display, "dim must be >= 1"));
    }

    let mut data = Vec::new();
    let mut count = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = textio::parse_float_row(&line, idx + 1)
            .map_err(|m| Error::parse(&display, m))?;
        if row.len() != dim {
            return Err(Error::parse(
                &display,
                format!("line {}: {} values but dim={}", idx + 1, row.len(), dim),
            ));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(
                &display,
                format!("line {}: non-finite value {bad}", idx + 1),
            ));
        }
        data.extend_from_slice(&row);
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput(format!("{display}: no data rows")));
    }
    Dataset::from_flat(data, dim, SourceTag::Real)
}

/// Serializes a dataset to the point-CSV format with 17-significant-digit
/// floats.
pub fn points_csv_string(data: &Dataset) -> String {
    let mut out = String::with_capacity(16 + data.len() * data.dim() * 26);
    out.push_str(&format!("dim={}\n", data.dim()));
    for p in data.iter() {
        let row: Vec<String> = p.iter().map(|&v| textio::fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes the point-CSV format.
pub fn save_points(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(&display, e))?,
    );
    out.write_all(points_csv_string(data).as_bytes())
        .map_err(|e| Error::io(&display, e))?;
    out.flush().map_err(|e| Error::io(&display, e))
}
