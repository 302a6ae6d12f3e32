//! Log-linear generative model: `p(x | h) ∝ exp(<W_x, h>)` with a unit latent.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{LatentState, TOL};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LLMV";
const FORMAT_VERSION: u32 = 1;

/// `M × d` movie vectors, row-major, coordinates `N(0, B²/(4d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovieVectors {
    num_movies: usize,
    dim: usize,
    scale: f64,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovieVectorsMeta {
    pub num_movies: usize,
    pub dim: usize,
    pub scale: f64,
    pub coordinate_variance: f64,
    pub layout: String,
    pub sha256: String,
}

impl MovieVectors {
    pub fn from_rows(num_movies: usize, dim: usize, scale: f64, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        Error::check_len(num_movies * dim, data.len())?;
        Ok(MovieVectors { num_movies, dim, scale, data })
    }

    pub fn num_movies(&self) -> usize {
        self.num_movies
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Per-coordinate variance `B²/(4d)` the rows were drawn with.
    pub fn coordinate_variance(&self) -> f64 {
        self.scale * self.scale / (4.0 * self.dim as f64)
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.dim..(x + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `<W_x, h>` for every movie.
    pub fn scores(&self, h: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.dim, h.len())?;
        Ok(self
            .data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Σ_x W_x` over a multiset of movie ids.
    pub fn sum_rows(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        for &x in ids {
            if x >= self.num_movies {
                return Err(Error::domain(format!("movie {x} >= M = {}", self.num_movies)));
            }
            for (a, w) in acc.iter_mut().zip(self.row(x)) {
                *a += w;
            }
        }
        Ok(acc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.num_movies as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::DataInconsistency(format!("movie vector file: {msg}"));
        if bytes.len() < 32 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let num_movies = word(8) as usize;
        let dim = word(16) as usize;
        let scale = f64::from_bits(word(24));
        let body = &bytes[32..];
        if body.len() != num_movies * dim * 8 {
            return Err(bad(&format!("expected {} payload bytes, found {}", num_movies * dim * 8, body.len())));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        MovieVectors::from_rows(num_movies, dim, scale, data)
    }

    pub fn meta(&self) -> MovieVectorsMeta {
        let mut hasher = Sha256::new();
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        MovieVectorsMeta {
            num_movies: self.num_movies,
            dim: self.dim,
            scale: self.scale,
            coordinate_variance: self.coordinate_variance(),
            layout: "row-major f64 little-endian after a 32-byte header".into(),
            sha256: hex::encode(hasher.finalize()),
        }
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&self.to_bytes())?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
        let w = MovieVectors::from_bytes(&bytes)?;
        let meta: MovieVectorsMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if meta != w.meta() {
            return Err(Error::DataInconsistency(format!("{stem}.json does not describe {stem}.bin")));
        }
        Ok(w)
    }
}

pub fn sample_movie_vectors<R: Rng + ?Sized>(num_movies: usize, dim: usize, scale: f64, rng: &mut R) -> Result<MovieVectors> {
    if num_movies == 0 || dim == 0 {
        return Err(Error::domain("M and d must be positive"));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::domain(format!("scale B must be nonnegative, got {scale}")));
    }
    let sd = scale / (2.0 * (dim as f64).sqrt());
    let data = if sd == 0.0 {
        vec![0.0; num_movies * dim]
    } else {
        let normal = Normal::new(0.0, sd).map_err(|e| Error::domain(e.to_string()))?;
        (0..num_movies * dim).map(|_| normal.sample(rng)).collect()
    };
    MovieVectors::from_rows(num_movies, dim, scale, data)
}

/// Uniform point on the unit sphere in `R^d`.
pub fn sample_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<LatentState> {
    if dim == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return LatentState::sphere(v.into_iter().map(|x| x / norm).collect());
        }
    }
}

fn check_unit(h: &[f64]) -> Result<()> {
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > TOL {
        return Err(Error::domain(format!("latent must have unit norm, got {norm}")));
    }
    Ok(())
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

pub fn log_partition_function(w: &MovieVectors, h: &[f64]) -> Result<f64> {
    check_unit(h)?;
    Ok(log_sum_exp(&w.scores(h)?))
}

/// `Z(h) = Σ_x exp(<W_x, h>)`.
pub fn partition_function(w: &MovieVectors, h: &[f64]) -> Result<f64> {
    Ok(log_partition_function(w, h)?.exp())
}

/// `M·exp(B²/(8d))`, the mean of `Z` over the movie-vector draw.
pub fn expected_partition_function(num_movies: usize, dim: usize, scale: f64) -> f64 {
    num_movies as f64 * (scale * scale / (8.0 * dim as f64)).exp()
}

/// Softmax table for one latent, sampled by inverse CDF.
#[derive(Debug, Clone)]
pub struct EmissionTable {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl EmissionTable {
    pub fn new(w: &MovieVectors, h: &[f64]) -> Result<Self> {
        check_unit(h)?;
        let scores = w.scores(h)?;
        let lz = log_sum_exp(&scores);
        let probs: Vec<f64> = scores.iter().map(|s| (s - lz).exp()).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        Ok(EmissionTable { probs, cdf })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("nonempty table");
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearSample {
    pub movie_ids: Vec<usize>,
    pub latent: LatentState,
}

pub fn emit_loglinear<R: Rng + ?Sized>(w: &MovieVectors, h: &LatentState, t: usize, rng: &mut R) -> Result<LogLinearSample> {
    let table = EmissionTable::new(w, &sphere_values(h)?)?;
    emit_from_table(&table, h, t, rng)
}

pub fn emit_from_table<R: Rng + ?Sized>(table: &EmissionTable, h: &LatentState, t: usize, rng: &mut R) -> Result<LogLinearSample> {
    if t == 0 {
        return Err(Error::domain("T must be at least 1"));
    }
    let movie_ids = (0..t).map(|_| table.draw(rng)).collect();
    Ok(LogLinearSample { movie_ids, latent: h.clone() })
}

pub(crate) fn sphere_values(h: &LatentState) -> Result<Vec<f64>> {
    match h {
        LatentState::Sphere(v) => Ok(v.clone()),
        _ => Err(Error::domain("log-linear model needs a sphere latent")),
    }
}

/// Coordinates of `v` in the orthonormal basis `{h, u_2, …, u_d}` given by
/// the Householder reflection that swaps `e_1` and `h`. Entry 0 is `<v, h>`.
pub fn latent_frame_coords(h: &[f64], v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = h.to_vec();
    u[0] -= 1.0;
    let uu: f64 = u.iter().map(|x| x * x).sum();
    if uu < 1e-24 {
        return v.to_vec();
    }
    let uv: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let f = 2.0 * uv / uu;
    v.iter().zip(&u).map(|(x, ui)| x - f * ui).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZConcentrationReport {
    pub expected: f64,
    /// `Z(h) / E[Z]` per latent, in draw order.
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub max_dev: f64,
}

impl ZConcentrationReport {
    pub fn frac_within(&self, eps: f64) -> f64 {
        self.ratios.iter().filter(|r| (*r - 1.0).abs() <= eps).count() as f64 / self.ratios.len() as f64
    }
}

pub fn z_concentration_report<R: Rng + ?Sized>(w: &MovieVectors, n_latents: usize, rng: &mut R) -> Result<ZConcentrationReport> {
    if n_latents == 0 {
        return Err(Error::domain("need at least one latent"));
    }
    let expected = expected_partition_function(w.num_movies(), w.dim(), w.scale());
    let mut ratios = Vec::with_capacity(n_latents);
    for _ in 0..n_latents {
        let h = sphere_values(&sample_sphere(w.dim(), rng)?)?;
        ratios.push((log_partition_function(w, &h)? - expected.ln()).exp());
    }
    let mean_ratio = ratios.iter().sum::<f64>() / n_latents as f64;
    let max_dev = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    Ok(ZConcentrationReport { expected, ratios, mean_ratio, max_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::derive_stream;

    fn unit(d: usize) -> Vec<f64> {
        let mut h = vec![0.0; d];
        h[0] = 1.0;
        h
    }

    #[test]
    fn pooled_variance_matches_scale() {
        let w = sample_movie_vectors(100_000, 25, 2.0, &mut derive_stream(1, 0)).unwrap();
        let n = w.data().len() as f64;
        let var = w.data().iter().map(|x| x * x).sum::<f64>() / n;
        let target = 0.04;
        // sd of the sample second moment of a Gaussian is σ²√(2/n)
        let sigma = target * (2.0 / n).sqrt();
        assert!((var - target).abs() <= 3.0 * sigma, "var {var}");
    }

    #[test]
    fn zero_scale_and_determinism() {
        let w = sample_movie_vectors(5, 3, 0.0, &mut derive_stream(1, 0)).unwrap();
        assert!(w.data().iter().all(|&x| x == 0.0));
        let a = sample_movie_vectors(50, 4, 1.0, &mut derive_stream(2, 0)).unwrap();
        let b = sample_movie_vectors(50, 4, 1.0, &mut derive_stream(2, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_function_examples() {
        let w = MovieVectors::from_rows(7, 3, 1.0, vec![0.0; 21]).unwrap();
        assert!((partition_function(&w, &unit(3)).unwrap() - 7.0).abs() < 1e-12);
        let w = MovieVectors::from_rows(1, 2, 1.0, vec![0.3, -0.4]).unwrap();
        let h = [0.6, 0.8];
        let z = partition_function(&w, &h).unwrap();
        assert!((z - (0.18f64 - 0.32).exp()).abs() < 1e-15);
        assert!(partition_function(&w, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_normalises() {
        let w = sample_movie_vectors(1000, 10, 2.0, &mut derive_stream(3, 0)).unwrap();
        let h = sphere_values(&sample_sphere(10, &mut derive_stream(3, 1)).unwrap()).unwrap();
        let t = EmissionTable::new(&w, &h).unwrap();
        assert!((t.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_movie_softmax_frequency() {
        let w = MovieVectors::from_rows(2, 1, 1.0, vec![3f64.ln(), 0.0]).unwrap();
        let h = LatentState::sphere(vec![1.0]).unwrap();
        let n = 100_000;
        let s = emit_loglinear(&w, &h, n, &mut derive_stream(4, 0)).unwrap();
        let zeros = s.movie_ids.iter().filter(|&&x| x == 0).count() as f64 / n as f64;
        let sd = (0.75 * 0.25 / n as f64).sqrt();
        assert!((zeros - 0.75).abs() <= 3.0 * sd, "{zeros}");
        assert!(emit_loglinear(&w, &h, 0, &mut derive_stream(4, 0)).is_err());
    }

    #[test]
    fn frame_coords_are_an_isometry() {
        let h = sphere_values(&sample_sphere(5, &mut derive_stream(7, 0)).unwrap()).unwrap();
        let v = [0.3, -1.0, 2.0, 0.5, 0.1];
        let c = latent_frame_coords(&h, &v);
        let dot: f64 = h.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((c[0] - dot).abs() < 1e-12);
        let n1: f64 = v.iter().map(|x| x * x).sum();
        let n2: f64 = c.iter().map(|x| x * x).sum();
        assert!((n1 - n2).abs() < 1e-12);
        assert_eq!(latent_frame_coords(&unit(5), &v), v.to_vec());
    }

    #[test]
    fn binary_roundtrip() {
        let w = sample_movie_vectors(13, 5, 1.5, &mut derive_stream(5, 0)).unwrap();
        let back = MovieVectors::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path(), "w").unwrap();
        assert_eq!(MovieVectors::load(dir.path(), "w").unwrap(), w);
        let mut bytes = w.to_bytes();
        bytes.pop();
        assert!(MovieVectors::from_bytes(&bytes).is_err());
    }

    #[test]
    fn single_movie_report_is_dispersed_but_finite() {
        let w = sample_movie_vectors(1, 4, 2.0, &mut derive_stream(6, 0)).unwrap();
        let r = z_concentration_report(&w, 20, &mut derive_stream(6, 1)).unwrap();
        assert!(r.ratios.iter().all(|x| x.is_finite() && *x > 0.0));
        let again = z_concentration_report(&w, 20, &mut derive_stream(6, 1)).unwrap();
        assert_eq!(r, again);
    }
}
