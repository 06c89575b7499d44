//! Synthetic data-generating distributions on bounded instance spaces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo_i, hi_i]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box bounds must have equal, nonzero length"));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::invalid("unbounded box"));
            }
            if l > h {
                return Err(Error::invalid(format!("empty box side [{l}, {h}]")));
            }
        }
        Ok(DomainBox { lo, hi })
    }

    /// The cube `[−half, half]^dim`.
    pub fn centered_cube(dim: usize, half: f64) -> Result<Self> {
        DomainBox::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clamp_in_place(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    /// Squared diagonal length, summed exactly from the side lengths.
    pub fn diameter_squared(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
            .collect()
    }
}

/// Diameter of the instance space: the box diagonal.
pub fn domain_diameter(domain: &DomainBox) -> f64 {
    domain.diameter_squared().sqrt()
}

/// Name and parameters of the generator that produced a [`SampleSet`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
}

/// A finite set of `dim`-dimensional points, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    #[serde(skip)]
    coords: Vec<f64>,
    pub source: SourceInfo,
    pub seed: Option<u64>,
    pub domain: Option<DomainBox>,
}

impl SampleSet {
    pub fn from_points(points: &[Vec<f64>], source: SourceInfo) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        SampleSet::from_flat(dim, coords, source)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, source: SourceInfo) -> Result<Self> {
        if dim == 0 && !coords.is_empty() {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        if dim > 0 && coords.len() % dim != 0 {
            return Err(Error::invalid("coordinate count is not a multiple of dim"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        Ok(SampleSet {
            dim,
            coords,
            source,
            seed: None,
            domain: None,
        })
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        if domain.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: domain.dim(),
            });
        }
        if let Some(i) = (0..self.len()).find(|&i| !domain.contains(self.point(i))) {
            return Err(Error::invalid(format!("point {i} lies outside the domain box")));
        }
        self.domain = Some(domain);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    /// One point per row; header `x1,…,xD`.
    pub fn to_csv(&self) -> String {
        let mut out = (1..=self.dim)
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for p in self.iter() {
            let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Writes `<stem>.csv` and the JSON metadata sidecar `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let meta_path = dir.join(format!("{stem}.json"));
        let meta = serde_json::to_string_pretty(&self.metadata())?;
        std::fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta_path = dir.join(format!("{stem}.json"));
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut set: SampleSet = serde_json::from_str(&meta_text)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut coords = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let before = coords.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::invalid(format!("{}:{}: bad number {field:?}", csv_path.display(), lineno + 1))
                })?;
                coords.push(v);
            }
            if coords.len() - before != set.dim {
                return Err(Error::Dimension {
                    expected: set.dim,
                    got: coords.len() - before,
                });
            }
        }
        set.coords = coords;
        Ok(set)
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.dim,
            "len": self.len(),
            "source": self.source,
            "seed": self.seed,
            "domain": self.domain,
        })
    }
}

/// `n` iid points uniform on the square `[−side/2, side/2]²`.
pub fn uniform_square<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::invalid(format!("side = {side} must be positive")));
    }
    let half = side / 2.0;
    let u = Uniform::new_inclusive(-half, half).expect("valid range");
    let coords: Vec<f64> = (0..2 * n).map(|_| u.sample(rng)).collect();
    let source = SourceInfo {
        generator: "uniform_square".into(),
        params: BTreeMap::from([("side".to_string(), side)]),
    };
    SampleSet::from_flat(2, coords, source)?.with_domain(DomainBox::centered_cube(2, half)?)
}

/// `n` iid points uniform on the circle of radius `radius` about the origin,
/// with domain box `[−radius, radius]²`. The distribution has no density.
pub fn uniform_circle<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("radius = {radius} must be positive")));
    }
    let u = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let a: f64 = u.sample(rng);
        coords.push((radius * a.cos()).clamp(-radius, radius));
        coords.push((radius * a.sin()).clamp(-radius, radius));
    }
    let source = SourceInfo {
        generator: "uniform_circle".into(),
        params: BTreeMap::from([("radius".to_string(), radius)]),
    };
    SampleSet::from_flat(2, coords, source)?.with_domain(DomainBox::centered_cube(2, radius)?)
}
