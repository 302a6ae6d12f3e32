//! Linear mixture (genre/topic) generative model.

use rand::seq::index::sample as sample_indices;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{core_size, overlap_cap, GenreStructure, LatentState, RatingSample, ReplacementMode, Variant};
use crate::error::{Error, Result};

/// Rejection attempts for bounded-overlap construction.
pub const MAX_STRUCTURE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StructureSpec {
    SharedCore { m: usize, k: usize, p: f64 },
    DisjointPartition { num_movies: usize, k: usize },
    BoundedOverlap { num_movies: usize, m: usize, k: usize, delta: f64 },
}

pub fn make_structure<R: Rng + ?Sized>(spec: StructureSpec, rng: &mut R) -> Result<GenreStructure> {
    match spec {
        StructureSpec::SharedCore { m, k, p } => shared_core(m, k, p),
        StructureSpec::DisjointPartition { num_movies, k } => disjoint_partition(num_movies, k, rng),
        StructureSpec::BoundedOverlap { num_movies, m, k, delta } => {
            bounded_overlap(num_movies, m, k, delta, rng)
        }
    }
}

/// Core movies get ids `0..round(pm)`; genre `g`'s unique movies follow in
/// one contiguous block.
fn shared_core(m: usize, k: usize, p: f64) -> Result<GenreStructure> {
    if m == 0 || k == 0 || !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("shared-core needs m, k >= 1 and p in [0,1], got m={m} k={k} p={p}")));
    }
    let core = core_size(p, m);
    let unique = m - core;
    let num_movies = core + k * unique;
    let genres = (0..k)
        .map(|g| (0..core).chain(core + g * unique..core + (g + 1) * unique).collect())
        .collect();
    GenreStructure::new(num_movies, genres, Variant::SharedCore { p })
}

fn disjoint_partition<R: Rng + ?Sized>(num_movies: usize, k: usize, rng: &mut R) -> Result<GenreStructure> {
    if k == 0 || num_movies == 0 || num_movies % k != 0 {
        return Err(Error::domain(format!("cannot partition {num_movies} movies into {k} equal genres")));
    }
    let m = num_movies / k;
    let mut perm: Vec<usize> = (0..num_movies).collect();
    perm.shuffle(rng);
    let genres = perm.chunks(m).map(|c| c.to_vec()).collect();
    GenreStructure::new(num_movies, genres, Variant::DisjointPartition)
}

/// Random bounded-overlap family. Each attempt spreads the `k·m` genre slots
/// as evenly as possible over the movies, deals them to genres at random and
/// then repairs over-full intersections by swapping members between genres.
fn bounded_overlap<R: Rng + ?Sized>(
    num_movies: usize,
    m: usize,
    k: usize,
    delta: f64,
    rng: &mut R,
) -> Result<GenreStructure> {
    if m == 0 || k == 0 || m > num_movies {
        return Err(Error::domain(format!("bounded-overlap needs 1 <= m <= M, got m={m} M={num_movies}")));
    }
    let cap = overlap_cap(delta, m);
    let slots = k * m;
    let base = slots / num_movies;
    let extra = slots % num_movies;
    // every pair of copies of one movie lands in some genre pair
    let forced = (num_movies - extra) * base * base.saturating_sub(1) / 2 + extra * (base + 1) * base / 2;
    let capacity = cap * k * (k - 1) / 2;
    if forced > capacity {
        return Err(Error::Construction {
            attempts: 0,
            reason: format!("need {forced} pairwise shared slots but the cap {cap} allows only {capacity}"),
        });
    }
    let mut last = String::new();
    for _ in 0..MAX_STRUCTURE_ATTEMPTS {
        match overlap_attempt(num_movies, m, k, cap, base, extra, rng) {
            Some(genres) => return GenreStructure::new(num_movies, genres, Variant::BoundedOverlap { delta }),
            None => last = format!("max pairwise intersection stayed above {cap}"),
        }
    }
    Err(Error::Construction { attempts: MAX_STRUCTURE_ATTEMPTS, reason: last })
}

fn overlap_attempt<R: Rng + ?Sized>(
    num_movies: usize,
    m: usize,
    k: usize,
    cap: usize,
    base: usize,
    extra: usize,
    rng: &mut R,
) -> Option<Vec<Vec<usize>>> {
    let mut multiplicity = vec![base; num_movies];
    for x in sample_indices(rng, num_movies, extra) {
        multiplicity[x] += 1;
    }
    let mut slot_movies: Vec<usize> = (0..num_movies)
        .flat_map(|x| std::iter::repeat_n(x, multiplicity[x]))
        .collect();
    slot_movies.shuffle(rng);

    let mut member = vec![vec![false; num_movies]; k];
    let mut genres: Vec<Vec<usize>> = vec![Vec::with_capacity(m); k];
    let mut open: Vec<usize> = (0..k).collect();
    for &x in &slot_movies {
        let candidates: Vec<usize> = open.iter().copied().filter(|&g| !member[g][x]).collect();
        let &g = candidates.choose(rng)?;
        member[g][x] = true;
        genres[g].push(x);
        if genres[g].len() == m {
            open.retain(|&h| h != g);
        }
    }

    let mut inter = vec![vec![0usize; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let n = genres[a].iter().filter(|&&x| member[b][x]).count();
            inter[a][b] = n;
            inter[b][a] = n;
        }
    }
    let excess = |n: usize| n.saturating_sub(cap) as i64;

    let max_moves = 200 * k * m + 10_000;
    for _ in 0..max_moves {
        let violating: Vec<(usize, usize)> = (0..k)
            .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
            .filter(|&(a, b)| inter[a][b] > cap)
            .collect();
        let Some(&(a0, b0)) = violating.choose(rng) else {
            return Some(genres);
        };
        // move a shared movie x out of one side of the pair
        let (a, b) = if rng.random_bool(0.5) { (a0, b0) } else { (b0, a0) };
        let shared: Vec<usize> = genres[a].iter().copied().filter(|&x| member[b][x]).collect();
        let Some(&x) = shared.choose(rng) else { continue };
        let c = rng.random_range(0..k);
        if c == a || member[c][x] {
            continue;
        }
        let yi = rng.random_range(0..m);
        let y = genres[c][yi];
        if member[a][y] {
            continue;
        }
        let mut delta = 0i64;
        for h in 0..k {
            if h == a || h == c {
                continue;
            }
            let da = member[h][y] as i64 - member[h][x] as i64;
            let dc = -da;
            delta += excess((inter[a][h] as i64 + da) as usize) - excess(inter[a][h]);
            delta += excess((inter[c][h] as i64 + dc) as usize) - excess(inter[c][h]);
        }
        if delta > 0 {
            continue;
        }
        for h in 0..k {
            if h == a || h == c {
                continue;
            }
            let da = member[h][y] as i64 - member[h][x] as i64;
            inter[a][h] = (inter[a][h] as i64 + da) as usize;
            inter[h][a] = inter[a][h];
            inter[c][h] = (inter[c][h] as i64 - da) as usize;
            inter[h][c] = inter[c][h];
        }
        member[a][x] = false;
        member[a][y] = true;
        member[c][y] = false;
        member[c][x] = true;
        let xi = genres[a].iter().position(|&v| v == x).expect("x in genre a");
        genres[a][xi] = y;
        genres[c][yi] = x;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmissionMode {
    /// Uniform `T`-subset of the union of liked genres.
    WithoutReplacement,
    /// `T` i.i.d. draws from `A · h_simplex`.
    Independent,
}

impl EmissionMode {
    pub fn replacement(self) -> ReplacementMode {
        match self {
            EmissionMode::WithoutReplacement => ReplacementMode::Set,
            EmissionMode::Independent => ReplacementMode::Multiset,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub structure: GenreStructure,
    /// Genres liked per user.
    pub s: usize,
    /// Ratings emitted per user.
    pub t: usize,
    pub emission: EmissionMode,
}

impl MixtureModel {
    pub fn new(structure: GenreStructure, s: usize, t: usize, emission: EmissionMode) -> Result<Self> {
        let k = structure.num_genres();
        if s == 0 || s > k {
            return Err(Error::domain(format!("need 1 <= s <= k, got s={s} k={k}")));
        }
        if t == 0 {
            return Err(Error::domain("T must be positive"));
        }
        if emission == EmissionMode::WithoutReplacement && s * structure.genre_size() < t {
            return Err(Error::domain(format!(
                "s*m = {} < T = {t}: not enough movies to emit without replacement",
                s * structure.genre_size()
            )));
        }
        Ok(MixtureModel { structure, s, t, emission })
    }

    pub fn num_genres(&self) -> usize {
        self.structure.num_genres()
    }

    pub fn sample_user<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentState {
        sample_user(self.num_genres(), self.s, rng).expect("s <= k checked at construction")
    }

    pub fn emit<R: Rng + ?Sized>(&self, user: &LatentState, rng: &mut R) -> Result<RatingSample> {
        emit(self, user, rng)
    }
}

/// Uniformly random `s`-subset indicator over `k` genres.
pub fn sample_user<R: Rng + ?Sized>(k: usize, s: usize, rng: &mut R) -> Result<LatentState> {
    if s == 0 || s > k {
        return Err(Error::domain(format!("need 1 <= s <= k, got s={s} k={k}")));
    }
    let support: Vec<usize> = sample_indices(rng, k, s).into_vec();
    LatentState::binary_from_support(k, &support)
}

/// Simplex latent with Dirichlet(`alpha`) weights on a uniform `s`-subset.
pub fn sample_weighted_user<R: Rng + ?Sized>(k: usize, s: usize, alpha: f64, rng: &mut R) -> Result<LatentState> {
    if s == 0 || s > k {
        return Err(Error::domain(format!("need 1 <= s <= k, got s={s} k={k}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::domain(e.to_string()))?;
    let support = sample_indices(rng, k, s).into_vec();
    let draws: Vec<f64> = support.iter().map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = draws.iter().sum();
    let mut w = vec![0.0; k];
    for (&g, d) in support.iter().zip(&draws) {
        w[g] = d / total;
    }
    // renormalise so the sum is 1 to within rounding
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    LatentState::simplex(w)
}

pub fn emit<R: Rng + ?Sized>(model: &MixtureModel, user: &LatentState, rng: &mut R) -> Result<RatingSample> {
    let structure = &model.structure;
    let k = structure.num_genres();
    if user.dim() != k {
        return Err(Error::Dimension { expected: k, found: user.dim() });
    }
    let support = user.support();
    match model.emission {
        EmissionMode::WithoutReplacement => {
            let union = structure.union_of(&support);
            if model.t > union.len() {
                return Err(Error::domain(format!(
                    "T = {} exceeds the union of liked genres ({})",
                    model.t,
                    union.len()
                )));
            }
            let ids = sample_indices(rng, union.len(), model.t).into_iter().map(|i| union[i]).collect();
            RatingSample::new(ids, ReplacementMode::Set)
        }
        EmissionMode::Independent => {
            let weights = user.as_simplex()?;
            let m = structure.genre_size();
            let mut ids = Vec::with_capacity(model.t);
            for _ in 0..model.t {
                let g = pick_weighted(&support, &weights, rng);
                ids.push(structure.genre(g)[rng.random_range(0..m)]);
            }
            RatingSample::new(ids, ReplacementMode::Multiset)
        }
    }
}

fn pick_weighted<R: Rng + ?Sized>(support: &[usize], weights: &[f64], rng: &mut R) -> usize {
    let uniform = support.iter().all(|&g| weights[g] == weights[support[0]]);
    if uniform {
        return support[rng.random_range(0..support.len())];
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &g in support {
        acc += weights[g];
        if u < acc {
            return g;
        }
    }
    *support.last().expect("nonempty support")
}

/// `M × k` matrix whose column `j` is uniform `1/m` on genre `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovieGenreMatrix {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

impl MovieGenreMatrix {
    pub fn from_structure(structure: &GenreStructure) -> Self {
        let (rows, cols) = (structure.num_movies(), structure.num_genres());
        let mut data = vec![0.0; rows * cols];
        let w = 1.0 / structure.genre_size() as f64;
        for (g, members) in structure.genres().iter().enumerate() {
            for &x in members {
                data[x * cols + g] = w;
            }
        }
        MovieGenreMatrix { rows, cols, data }
    }

    /// Arbitrary dense `rows × cols` matrix (row-major), used for generic
    /// pseudo-inverse instances.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len(rows * cols, data.len())?;
        Ok(MovieGenreMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }

    /// `A · h`.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        Error::check_len(self.cols, h.len())?;
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(h).map(|(a, b)| a * b).sum())
            .collect())
    }
}

pub fn movie_genre_matrix(structure: &GenreStructure) -> MovieGenreMatrix {
    MovieGenreMatrix::from_structure(structure)
}

/// `sgn(<w, 2h − 1>)` for a binary latent.
pub fn label_hyperplane(w: &[f64], h: &LatentState) -> Result<i8> {
    let LatentState::Binary(bits) = h else {
        return Err(Error::domain("hyperplane labels need a binary latent"));
    };
    Error::check_len(w.len(), bits.len())?;
    let dot: f64 = w.iter().zip(bits).map(|(wi, &b)| wi * (2.0 * b as f64 - 1.0)).sum();
    if dot > 0.0 {
        Ok(1)
    } else if dot < 0.0 {
        Ok(-1)
    } else {
        Err(Error::Tie)
    }
}

/// 1 iff `movie` lies in one of the user's liked genres.
pub fn label_likes_movie(structure: &GenreStructure, h: &LatentState, movie: usize) -> Result<u8> {
    if movie >= structure.num_movies() {
        return Err(Error::domain(format!("movie {movie} >= M = {}", structure.num_movies())));
    }
    if h.dim() != structure.num_genres() {
        return Err(Error::Dimension { expected: structure.num_genres(), found: h.dim() });
    }
    let liked = h.support();
    Ok(structure.genres_of(movie).iter().any(|&g| liked.contains(&(g as usize))) as u8)
}

/// Hyperplane whose labels are balanced over single-genre users (`s = 1`):
/// exactly `⌊k/2⌋` genres get label `+1` and no genre is a tie.
pub fn balanced_single_genre_hyperplane<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::domain("balanced hyperplane needs k >= 2"));
    }
    let mut w: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    if k == 2 {
        return Ok(w);
    }
    let mut sorted = w.clone();
    sorted.sort_by(f64::total_cmp);
    let split = k - k / 2;
    let theta = 0.5 * (sorted[split - 1] + sorted[split]);
    // 2(w_j + c) − Σ(w + c) = 2 w_j − S − (k − 2) c, zero exactly at w_j = θ
    let total: f64 = w.iter().sum();
    let c = (2.0 * theta - total) / (k as f64 - 2.0);
    w.iter_mut().for_each(|v| *v += c);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::derive_stream;

    #[test]
    fn shared_core_example() {
        let s = make_structure(StructureSpec::SharedCore { m: 4, k: 2, p: 0.5 }, &mut derive_stream(1, 0)).unwrap();
        assert_eq!(s.num_movies(), 6);
        assert_eq!(s.core().len(), 2);
        for g in 0..2 {
            let unique: Vec<_> = s.genre(g).iter().filter(|&&x| s.genres_of(x).len() == 1).collect();
            assert_eq!(unique.len(), 2);
        }
    }

    #[test]
    fn disjoint_example() {
        let s = make_structure(StructureSpec::DisjointPartition { num_movies: 6, k: 3 }, &mut derive_stream(1, 0)).unwrap();
        let mut all: Vec<usize> = s.genres().iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(s.genres().iter().all(|g| g.len() == 2));
        assert!(make_structure(StructureSpec::DisjointPartition { num_movies: 7, k: 3 }, &mut derive_stream(1, 0)).is_err());
    }

    #[test]
    fn bounded_overlap_example_checked_pairwise() {
        let spec = StructureSpec::BoundedOverlap { num_movies: 950, m: 100, k: 10, delta: 0.05 };
        let s = make_structure(spec, &mut derive_stream(3, 0)).unwrap();
        for a in 0..10 {
            assert_eq!(s.genre(a).len(), 100);
            for b in a + 1..10 {
                let set: std::collections::HashSet<_> = s.genre(a).iter().collect();
                let n = s.genre(b).iter().filter(|x| set.contains(x)).count();
                assert!(n <= 5, "genres {a},{b} share {n}");
            }
        }
    }

    #[test]
    fn bounded_overlap_infeasible_is_an_error() {
        let spec = StructureSpec::BoundedOverlap { num_movies: 150, m: 100, k: 10, delta: 0.01 };
        assert!(matches!(make_structure(spec, &mut derive_stream(3, 0)), Err(Error::Construction { .. })));
    }

    #[test]
    fn sample_user_forced_and_popcount() {
        let mut rng = derive_stream(5, 0);
        assert_eq!(sample_user(5, 5, &mut rng).unwrap(), LatentState::Binary(vec![1; 5]));
        for _ in 0..100 {
            assert_eq!(sample_user(10, 3, &mut rng).unwrap().sparsity(), 3);
        }
        assert!(sample_user(2, 3, &mut rng).is_err());
    }

    #[test]
    fn sample_user_is_uniform_for_k2_s1() {
        let mut rng = derive_stream(6, 0);
        let n = 10_000;
        let first = (0..n).filter(|_| sample_user(2, 1, &mut rng).unwrap().support() == vec![0]).count();
        // chi-square with one degree of freedom, 3 sigma equivalent
        let z = (first as f64 - n as f64 / 2.0) / (n as f64 / 4.0).sqrt();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn emission_support_and_forced_union() {
        let s = make_structure(StructureSpec::DisjointPartition { num_movies: 12, k: 3 }, &mut derive_stream(1, 0)).unwrap();
        let model = MixtureModel::new(s.clone(), 1, 4, EmissionMode::WithoutReplacement).unwrap();
        let mut rng = derive_stream(1, 1);
        let h = LatentState::binary_from_support(3, &[2]).unwrap();
        let x = model.emit(&h, &mut rng).unwrap();
        assert_eq!(x.movie_ids(), s.genre(2));
        let model = MixtureModel::new(s.clone(), 1, 3, EmissionMode::Independent).unwrap();
        for _ in 0..50 {
            let x = model.emit(&h, &mut rng).unwrap();
            assert!(x.movie_ids().iter().all(|m| s.genre(2).contains(m)));
        }
    }

    #[test]
    fn set_mode_rejects_oversized_t() {
        let s = make_structure(StructureSpec::DisjointPartition { num_movies: 12, k: 3 }, &mut derive_stream(1, 0)).unwrap();
        assert!(MixtureModel::new(s.clone(), 1, 5, EmissionMode::WithoutReplacement).is_err());
        let model = MixtureModel::new(s, 2, 5, EmissionMode::WithoutReplacement).unwrap();
        let h = LatentState::binary_from_support(3, &[0]).unwrap();
        assert!(model.emit(&h, &mut derive_stream(1, 2)).is_err());
    }

    #[test]
    fn matrix_examples() {
        let s = GenreStructure::new(4, vec![vec![0, 1], vec![2, 3]], Variant::DisjointPartition).unwrap();
        let a = movie_genre_matrix(&s);
        assert_eq!(a.column(0), vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(a.column(1), vec![0.0, 0.0, 0.5, 0.5]);
        let s = make_structure(StructureSpec::SharedCore { m: 5, k: 3, p: 1.0 }, &mut derive_stream(1, 0)).unwrap();
        let a = movie_genre_matrix(&s);
        assert_eq!(a.column(0), a.column(2));
        let s = make_structure(StructureSpec::SharedCore { m: 7, k: 4, p: 0.3 }, &mut derive_stream(1, 0)).unwrap();
        for c in movie_genre_matrix(&s).column_sums() {
            assert!((c - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn hyperplane_labels() {
        let e1 = LatentState::binary_from_support(2, &[0]).unwrap();
        let e2 = LatentState::binary_from_support(2, &[1]).unwrap();
        assert_eq!(label_hyperplane(&[1.0, 0.0], &e1).unwrap(), 1);
        assert_eq!(label_hyperplane(&[1.0, 0.0], &e2).unwrap(), -1);
        let half = LatentState::binary_from_support(4, &[0, 2]).unwrap();
        assert!(matches!(label_hyperplane(&[1.0; 4], &half), Err(Error::Tie)));
    }

    #[test]
    fn likes_movie_labels() {
        let s = make_structure(StructureSpec::SharedCore { m: 4, k: 3, p: 0.5 }, &mut derive_stream(1, 0)).unwrap();
        let h = LatentState::binary_from_support(3, &[1]).unwrap();
        for &x in &s.core() {
            assert_eq!(label_likes_movie(&s, &h, x).unwrap(), 1);
        }
        let other_unique = s.genre(0).iter().copied().find(|&x| s.genres_of(x).len() == 1).unwrap();
        assert_eq!(label_likes_movie(&s, &h, other_unique).unwrap(), 0);
        let own_unique = s.genre(1).iter().copied().find(|&x| s.genres_of(x).len() == 1).unwrap();
        assert_eq!(label_likes_movie(&s, &h, own_unique).unwrap(), 1);
        assert!(label_likes_movie(&s, &h, 999).is_err());
    }

    #[test]
    fn balanced_hyperplane_splits_genres() {
        for k in [2usize, 3, 10, 50] {
            let w = balanced_single_genre_hyperplane(k, &mut derive_stream(9, k as u64)).unwrap();
            let pos = (0..k)
                .filter(|&j| label_hyperplane(&w, &LatentState::binary_from_support(k, &[j]).unwrap()).unwrap() == 1)
                .count();
            assert_eq!(pos, k / 2, "k = {k}");
        }
    }

    #[test]
    fn weighted_user_is_on_simplex() {
        let h = sample_weighted_user(6, 3, 0.5, &mut derive_stream(2, 2)).unwrap();
        assert_eq!(h.sparsity(), 3);
        let total: f64 = h.to_vec().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
