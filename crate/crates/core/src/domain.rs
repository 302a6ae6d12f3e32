//! Shared domain types: genre structures, latent states, rating samples and
//! encoder validity accounting.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default comparison tolerance for floating point invariants.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// `‖h_est − h_true‖ / ‖h_true‖` in the chosen norm.
pub fn norm_error(h_est: &[f64], h_true: &[f64], norm: Norm) -> Result<f64> {
    Error::check_len(h_true.len(), h_est.len())?;
    let denom = norm.of(h_true);
    if denom <= 0.0 {
        return Err(Error::domain("reference vector has zero norm"));
    }
    let diff: Vec<f64> = h_est.iter().zip(h_true).map(|(a, b)| a - b).collect();
    Ok(norm.of(&diff) / denom)
}

/// Sup-norm deviation guaranteed for an `alpha`-Lipschitz classifier applied
/// to an encoder output with relative error `error_factor`.
pub fn lipschitz_transfer_bound(alpha: f64, error_factor: f64, h_norm: f64) -> Result<f64> {
    if alpha < 0.0 || error_factor < 0.0 || h_norm < 0.0 {
        return Err(Error::domain("lipschitz bound inputs must be nonnegative"));
    }
    Ok(error_factor * alpha * h_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    SharedCore { p: f64 },
    DisjointPartition,
    BoundedOverlap { delta: f64 },
}

/// Movie/genre incidence: `k` genres of `m` movies each over `M` movies.
///
/// Genres are stored as sorted id lists. A CSR index from movie to the genres
/// containing it is rebuilt on construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "StructureRepr", into = "StructureRepr")]
pub struct GenreStructure {
    num_movies: usize,
    genre_size: usize,
    variant: Variant,
    genres: Vec<Vec<usize>>,
    member_offsets: Vec<usize>,
    member_genres: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureRepr {
    num_movies: usize,
    genre_size: usize,
    variant: Variant,
    genres: Vec<Vec<usize>>,
}

impl TryFrom<StructureRepr> for GenreStructure {
    type Error = Error;
    fn try_from(r: StructureRepr) -> Result<Self> {
        GenreStructure::new(r.num_movies, r.genres, r.variant)
    }
}

impl From<GenreStructure> for StructureRepr {
    fn from(s: GenreStructure) -> Self {
        StructureRepr {
            num_movies: s.num_movies,
            genre_size: s.genre_size,
            variant: s.variant,
            genres: s.genres,
        }
    }
}

/// Number of core movies a shared-core structure with fraction `p` has.
pub fn core_size(p: f64, m: usize) -> usize {
    (p * m as f64).round() as usize
}

/// Largest pairwise intersection allowed for a bounded-overlap structure.
pub fn overlap_cap(delta: f64, m: usize) -> usize {
    (delta * m as f64 + TOL).floor() as usize
}

impl GenreStructure {
    /// Validates the variant invariant and builds the membership index.
    pub fn new(num_movies: usize, mut genres: Vec<Vec<usize>>, variant: Variant) -> Result<Self> {
        let k = genres.len();
        if k == 0 {
            return Err(Error::Structure("no genres".into()));
        }
        let m = genres[0].len();
        if m == 0 {
            return Err(Error::Structure("empty genre".into()));
        }
        for (g, members) in genres.iter_mut().enumerate() {
            members.sort_unstable();
            if members.len() != m {
                return Err(Error::Structure(format!(
                    "genre {g} has {} members, expected {m}",
                    members.len()
                )));
            }
            if members.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Structure(format!("genre {g} has duplicate members")));
            }
            if let Some(&last) = members.last() {
                if last >= num_movies {
                    return Err(Error::Structure(format!(
                        "genre {g} contains movie {last} >= M = {num_movies}"
                    )));
                }
            }
        }

        let mut counts = vec![0usize; num_movies];
        for members in &genres {
            for &x in members {
                counts[x] += 1;
            }
        }
        let mut member_offsets = Vec::with_capacity(num_movies + 1);
        member_offsets.push(0);
        for c in &counts {
            member_offsets.push(member_offsets.last().unwrap() + c);
        }
        let mut fill = member_offsets.clone();
        let mut member_genres = vec![0u32; *member_offsets.last().unwrap()];
        for (g, members) in genres.iter().enumerate() {
            for &x in members {
                member_genres[fill[x]] = g as u32;
                fill[x] += 1;
            }
        }

        let s = GenreStructure {
            num_movies,
            genre_size: m,
            variant,
            genres,
            member_offsets,
            member_genres,
        };
        s.check_variant(&counts)?;
        Ok(s)
    }

    fn check_variant(&self, counts: &[usize]) -> Result<()> {
        let k = self.genres.len();
        let m = self.genre_size;
        match self.variant {
            Variant::SharedCore { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Structure(format!("core fraction p = {p} outside [0, 1]")));
                }
                let core = core_size(p, m);
                let in_all = counts.iter().filter(|&&c| c == k).count();
                // with k = 1 every member is "in all genres"
                let expected_core = if k == 1 { m } else { core };
                if in_all != expected_core {
                    return Err(Error::Structure(format!(
                        "shared core has {in_all} movies, expected {core}"
                    )));
                }
                if k > 1 && counts.iter().any(|&c| c != 0 && c != 1 && c != k) {
                    return Err(Error::Structure(
                        "non-core movie appears in more than one genre".into(),
                    ));
                }
                if counts.iter().filter(|&&c| c > 0).count() != self.num_movies {
                    return Err(Error::Structure("shared-core structure leaves movies unused".into()));
                }
            }
            Variant::DisjointPartition => {
                if self.num_movies != k * m || counts.iter().any(|&c| c != 1) {
                    return Err(Error::Structure("genres do not partition the movies".into()));
                }
            }
            Variant::BoundedOverlap { delta } => {
                let cap = overlap_cap(delta, m);
                let worst = self.max_pairwise_intersection();
                if worst > cap {
                    return Err(Error::Structure(format!(
                        "pairwise intersection {worst} exceeds cap {cap}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_movies(&self) -> usize {
        self.num_movies
    }

    pub fn num_genres(&self) -> usize {
        self.genres.len()
    }

    pub fn genre_size(&self) -> usize {
        self.genre_size
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn genres(&self) -> &[Vec<usize>] {
        &self.genres
    }

    pub fn genre(&self, g: usize) -> &[usize] {
        &self.genres[g]
    }

    /// Genres containing `movie`, ascending.
    pub fn genres_of(&self, movie: usize) -> &[u32] {
        &self.member_genres[self.member_offsets[movie]..self.member_offsets[movie + 1]]
    }

    /// Movies contained in every genre (the shared core for that variant).
    pub fn core(&self) -> Vec<usize> {
        let k = self.genres.len();
        (0..self.num_movies)
            .filter(|&x| self.genres_of(x).len() == k)
            .collect()
    }

    /// Sorted union of the given genres.
    pub fn union_of(&self, genres: &[usize]) -> Vec<usize> {
        let mut u: Vec<usize> = genres
            .iter()
            .flat_map(|&g| self.genres[g].iter().copied())
            .collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    pub fn intersection_size(&self, a: usize, b: usize) -> usize {
        sorted_intersection_len(&self.genres[a], &self.genres[b])
    }

    pub fn max_pairwise_intersection(&self) -> usize {
        let k = self.genres.len();
        let mut worst = 0;
        for a in 0..k {
            for b in a + 1..k {
                worst = worst.max(self.intersection_size(a, b));
            }
        }
        worst
    }

    /// SHA-256 over the canonical JSON form; identifies the structure a
    /// pseudo-inverse was certified for.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("structure serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub(crate) fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// A user's hidden representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum LatentState {
    /// 0/1 indicator of the liked genres.
    Binary(Vec<u8>),
    /// Mixing weights over genres.
    Simplex(Vec<f64>),
    /// Unit vector in R^d.
    Sphere(Vec<f64>),
}

impl LatentState {
    pub fn binary_from_support(k: usize, support: &[usize]) -> Result<Self> {
        let mut bits = vec![0u8; k];
        for &g in support {
            if g >= k {
                return Err(Error::domain(format!("genre {g} out of range for k = {k}")));
            }
            if bits[g] == 1 {
                return Err(Error::domain(format!("genre {g} listed twice")));
            }
            bits[g] = 1;
        }
        Ok(LatentState::Binary(bits))
    }

    pub fn simplex(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::domain("simplex weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("simplex weights sum to {total}")));
        }
        Ok(LatentState::Simplex(weights))
    }

    pub fn sphere(v: Vec<f64>) -> Result<Self> {
        let n = Norm::L2.of(&v);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("sphere latent has norm {n}")));
        }
        Ok(LatentState::Sphere(v))
    }

    pub fn dim(&self) -> usize {
        match self {
            LatentState::Binary(b) => b.len(),
            LatentState::Simplex(v) | LatentState::Sphere(v) => v.len(),
        }
    }

    /// Indices of nonzero coordinates.
    pub fn support(&self) -> Vec<usize> {
        match self {
            LatentState::Binary(b) => b.iter().enumerate().filter(|(_, &x)| x != 0).map(|(i, _)| i).collect(),
            LatentState::Simplex(v) | LatentState::Sphere(v) => {
                v.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect()
            }
        }
    }

    pub fn sparsity(&self) -> usize {
        self.support().len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            LatentState::Binary(b) => b.iter().map(|&x| x as f64).collect(),
            LatentState::Simplex(v) | LatentState::Sphere(v) => v.clone(),
        }
    }

    /// Mixing-vector view: binary states get weight `1/s` on each liked genre.
    pub fn as_simplex(&self) -> Result<Vec<f64>> {
        match self {
            LatentState::Binary(b) => {
                let s = b.iter().filter(|&&x| x != 0).count();
                if s == 0 {
                    return Err(Error::domain("binary latent has no active genre"));
                }
                Ok(b.iter().map(|&x| if x != 0 { 1.0 / s as f64 } else { 0.0 }).collect())
            }
            LatentState::Simplex(v) => Ok(v.clone()),
            LatentState::Sphere(_) => Err(Error::domain("sphere latent has no simplex view")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementMode {
    Set,
    Multiset,
}

/// The observable: `T` movie ids, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSample {
    movie_ids: Vec<usize>,
    mode: ReplacementMode,
}

impl RatingSample {
    pub fn new(mut movie_ids: Vec<usize>, mode: ReplacementMode) -> Result<Self> {
        movie_ids.sort_unstable();
        if mode == ReplacementMode::Set && movie_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("set-mode sample contains a repeated movie"));
        }
        Ok(RatingSample { movie_ids, mode })
    }

    pub fn movie_ids(&self) -> &[usize] {
        &self.movie_ids
    }

    pub fn mode(&self) -> ReplacementMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.movie_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.movie_ids.is_empty()
    }

    pub fn contains(&self, movie: usize) -> bool {
        self.movie_ids.binary_search(&movie).is_ok()
    }

    /// Bag-of-words view of length `num_movies`.
    pub fn counts(&self, num_movies: usize) -> Result<Vec<u32>> {
        let mut c = vec![0u32; num_movies];
        for &x in &self.movie_ids {
            if x >= num_movies {
                return Err(Error::domain(format!("movie {x} >= M = {num_movies}")));
            }
            c[x] += 1;
        }
        Ok(c)
    }

    /// Distinct movies with their multiplicities, ascending by id.
    pub fn runs(&self) -> Vec<(usize, u32)> {
        let mut out: Vec<(usize, u32)> = Vec::new();
        for &x in &self.movie_ids {
            match out.last_mut() {
                Some((y, c)) if *y == x => *c += 1,
                _ => out.push((x, 1)),
            }
        }
        out
    }
}

/// Empirical validity of an encoder: the fraction of trials whose relative
/// error stayed within `error_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub error_factor: f64,
    pub success_prob: f64,
    pub successes: usize,
    pub trials: usize,
    pub norm: Norm,
    /// Empirical error quantiles at 50%, 90% and 99%.
    pub quantiles: [f64; 3],
    pub mean_error: f64,
}

impl ValidityReport {
    pub fn from_errors(errors: &[f64], error_factor: f64, norm: Norm) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::domain("validity report needs at least one trial"));
        }
        if error_factor < 0.0 {
            return Err(Error::domain("error factor must be nonnegative"));
        }
        let successes = errors.iter().filter(|&&e| e <= error_factor).count();
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&sorted, p);
        Ok(ValidityReport {
            error_factor,
            success_prob: successes as f64 / errors.len() as f64,
            successes,
            trials: errors.len(),
            norm,
            quantiles: [q(0.5), q(0.9), q(0.99)],
            mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
        })
    }
}

/// Nearest-rank quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn norm_error_examples() {
        assert_eq!(norm_error(&[0.5, 0.5], &[0.5, 0.5], Norm::L1).unwrap(), 0.0);
        assert_eq!(norm_error(&[0.0, 0.0], &[0.5, 0.5], Norm::L1).unwrap(), 1.0);
        assert_abs_diff_eq!(
            norm_error(&[1.0, 0.0], &[0.0, 1.0], Norm::L2).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn norm_error_rejects_bad_input() {
        assert!(matches!(norm_error(&[1.0], &[0.0], Norm::L1), Err(Error::Domain(_))));
        assert!(matches!(
            norm_error(&[1.0, 2.0], &[1.0], Norm::L2),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn lipschitz_examples() {
        assert_abs_diff_eq!(lipschitz_transfer_bound(2.0, 0.1, 1.0).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(lipschitz_transfer_bound(0.0, 0.5, 3.0).unwrap(), 0.0);
        assert_eq!(lipschitz_transfer_bound(1.0, 0.0, 5.0).unwrap(), 0.0);
        assert!(lipschitz_transfer_bound(-1.0, 0.0, 5.0).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, 5)
    }

    proptest! {
        #[test]
        fn norm_error_rescaled_symmetry(a in vec3(), b in vec3(), l2 in any::<bool>()) {
            let n = if l2 { Norm::L2 } else { Norm::L1 };
            prop_assume!(n.of(&a) > 1e-6 && n.of(&b) > 1e-6);
            let ab = norm_error(&a, &b, n).unwrap() * n.of(&b);
            let ba = norm_error(&b, &a, n).unwrap() * n.of(&a);
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
        }

        #[test]
        fn norm_error_triangle(a in vec3(), b in vec3(), c in vec3(), l2 in any::<bool>()) {
            let n = if l2 { Norm::L2 } else { Norm::L1 };
            prop_assume!(n.of(&b) > 1e-6 && n.of(&c) > 1e-6);
            let ac = norm_error(&a, &c, n).unwrap() * n.of(&c);
            let ab = norm_error(&a, &b, n).unwrap() * n.of(&b);
            let bc = norm_error(&b, &c, n).unwrap() * n.of(&c);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn structure_rejects_bad_sizes() {
        let err = GenreStructure::new(4, vec![vec![0, 1], vec![2]], Variant::DisjointPartition);
        assert!(matches!(err, Err(Error::Structure(_))));
        let err = GenreStructure::new(3, vec![vec![0, 1], vec![2, 3]], Variant::DisjointPartition);
        assert!(matches!(err, Err(Error::Structure(_))));
    }

    #[test]
    fn shared_core_validation() {
        // core {0,1}, uniques {2,3} and {4,5}
        let s = GenreStructure::new(
            6,
            vec![vec![0, 1, 2, 3], vec![0, 1, 4, 5]],
            Variant::SharedCore { p: 0.5 },
        )
        .unwrap();
        assert_eq!(s.core(), vec![0, 1]);
        assert_eq!(s.genres_of(0), &[0, 1]);
        assert_eq!(s.genres_of(4), &[1]);
        let bad = GenreStructure::new(
            5,
            vec![vec![0, 1, 2, 3], vec![0, 1, 2, 4]],
            Variant::SharedCore { p: 0.5 },
        );
        assert!(bad.is_err());
    }

    #[test]
    fn structure_json_roundtrip_and_hash() {
        let s = GenreStructure::new(4, vec![vec![0, 1], vec![2, 3]], Variant::DisjointPartition).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"genres\":[[0,1],[2,3]]"));
        let back: GenreStructure = serde_json::from_str(&json).unwrap();
        assert_eq!(back.content_hash(), s.content_hash());
        let tampered = json.replace("[2,3]", "[1,3]");
        assert!(serde_json::from_str::<GenreStructure>(&tampered).is_err());
    }

    #[test]
    fn latent_views() {
        let h = LatentState::binary_from_support(4, &[1, 3]).unwrap();
        assert_eq!(h.support(), vec![1, 3]);
        assert_eq!(h.as_simplex().unwrap(), vec![0.0, 0.5, 0.0, 0.5]);
        assert!(LatentState::simplex(vec![0.5, 0.6]).is_err());
        assert!(LatentState::sphere(vec![0.6, 0.8]).is_ok());
        assert!(LatentState::sphere(vec![0.6, 0.81]).is_err());
    }

    #[test]
    fn rating_sample_views() {
        assert!(RatingSample::new(vec![1, 1], ReplacementMode::Set).is_err());
        let x = RatingSample::new(vec![3, 1, 3], ReplacementMode::Multiset).unwrap();
        assert_eq!(x.counts(4).unwrap(), vec![0, 1, 0, 2]);
        assert_eq!(x.runs(), vec![(1, 1), (3, 2)]);
        assert!(x.counts(3).is_err());
    }

    #[test]
    fn validity_report_counts() {
        let r = ValidityReport::from_errors(&[0.0, 0.1, 0.2, 0.3], 0.15, Norm::L1).unwrap();
        assert_eq!(r.successes, 2);
        assert_eq!(r.success_prob, 0.5);
        assert_eq!(r.quantiles[0], 0.1);
        assert_eq!(r.quantiles[2], 0.3);
    }
}
