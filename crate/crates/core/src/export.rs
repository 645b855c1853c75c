//! Type-embedding export and k-means clustering of the exported vectors.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::matvec;
use crate::error::{Error, Result};
use crate::kg_data::{RelationId, TripleStore};
use crate::params::ModelParams;

/// Type vectors of every entity: `y_e`, or `M_r y_e` for a relation.
pub fn type_rows(p: &ModelParams, relation: Option<RelationId>) -> Vec<Vec<f64>> {
    (0..p.num_entities())
        .map(|e| {
            let y = p.type_emb.row(e);
            match relation {
                Some(r) => matvec(p.projection(r), y),
                None => y.to_vec(),
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Writes `entity,cluster,dim_0..dim_{d-1}`; `cluster` is −1 when no
/// assignment is given.
pub fn write_type_csv(
    store: &TripleStore,
    rows: &[Vec<f64>],
    clusters: Option<&[usize]>,
    out: impl AsRef<Path>,
) -> Result<usize> {
    let out = out.as_ref();
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    let d = rows.first().map_or(0, Vec::len);
    let mut header = String::from("entity,cluster");
    for i in 0..d {
        header.push_str(&format!(",dim_{i}"));
    }
    let io = |e| Error::io(out, e);
    writeln!(w, "{header}").map_err(io)?;
    for (e, row) in rows.iter().enumerate() {
        let cluster = clusters.map_or(-1, |c| c[e] as i64);
        write!(w, "{},{}", csv_field(&store.entity_names()[e]), cluster).map_err(io)?;
        for x in row {
            write!(w, ",{x:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows.len())
}

/// Exports type vectors, optionally relation-projected and clustered with
/// `kmeans_request = Some((K, seed))`. Returns the number of rows written.
pub fn export_type_embeddings(
    p: &ModelParams,
    store: &TripleStore,
    relation: Option<&str>,
    kmeans_request: Option<(usize, u64)>,
    out: impl AsRef<Path>,
) -> Result<usize> {
    export_type_embeddings_with(p, store, relation, kmeans_request, KMEANS_RESTARTS, out)
}

/// [`export_type_embeddings`] with an explicit k-means restart count.
pub fn export_type_embeddings_with(
    p: &ModelParams,
    store: &TripleStore,
    relation: Option<&str>,
    kmeans_request: Option<(usize, u64)>,
    restarts: usize,
    out: impl AsRef<Path>,
) -> Result<usize> {
    let relation = relation
        .map(|name| {
            store
                .relation_id(name)
                .ok_or_else(|| Error::UnknownRelation(name.to_owned()))
        })
        .transpose()?;
    let rows = type_rows(p, relation);
    let clusters = match kmeans_request {
        Some((k, seed)) => Some(kmeans_with_restarts(&rows, k, seed, restarts)?.assignments),
        None => None,
    };
    write_type_csv(store, &rows, clusters.as_deref(), out)
}

/// Parses a CSV written by [`write_type_csv`] back into
/// `(entity, cluster, vector)` rows.
pub fn read_type_csv(path: impl AsRef<Path>) -> Result<Vec<(String, i64, Vec<f64>)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let malformed = |found| Error::MalformedLine {
            file: path.to_path_buf(),
            line: i + 1,
            found,
        };
        // Entity names may be quoted; numbers never are.
        let (name, rest) = if let Some(stripped) = line.strip_prefix('"') {
            let mut name = String::new();
            let mut chars = stripped.char_indices().peekable();
            let mut end = None;
            while let Some((j, c)) = chars.next() {
                if c == '"' {
                    if chars.peek().map(|p| p.1) == Some('"') {
                        name.push('"');
                        chars.next();
                    } else {
                        end = Some(j + 1);
                        break;
                    }
                } else {
                    name.push(c);
                }
            }
            let end = end.ok_or_else(|| malformed(0))?;
            (name, stripped[end..].strip_prefix(',').ok_or_else(|| malformed(1))?)
        } else {
            let (n, r) = line.split_once(',').ok_or_else(|| malformed(1))?;
            (n.to_owned(), r)
        };
        let fields: Vec<&str> = rest.split(',').collect();
        let cluster = fields[0].parse().map_err(|_| malformed(fields.len() + 1))?;
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| malformed(fields.len() + 1))?;
        out.push((name, cluster, values));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub distortion: f64,
    /// Distortion after each assignment step of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;
/// Default number of seeded restarts; the lowest-distortion run wins. The
/// first uses greedy farthest-point seeding, the rest distance-weighted
/// sampling.
pub const KMEANS_RESTARTS: usize = 50;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Farthest-point-style seeding from a given first point. With `greedy`
/// each further seed is the point farthest from the chosen ones; otherwise
/// it is drawn with probability proportional to its squared distance.
fn seed_centroids(
    points: &[Vec<f64>],
    k: usize,
    first: usize,
    greedy: bool,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let next = if greedy || total <= 0.0 {
            // Lowest index among the farthest points.
            let mut best = 0;
            for (i, &d) in min_d.iter().enumerate() {
                if d > min_d[best] {
                    best = i;
                }
            }
            best
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total distance")
        };
        centroids.push(points[next].clone());
        for (j, p) in points.iter().enumerate() {
            min_d[j] = min_d[j].min(sq_dist(p, &points[next]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut history = Vec::new();
    let mut assignments = vec![0; points.len()];
    let mut iterations = 0;
    loop {
        let mut distortion = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            distortion += d;
        }
        history.push(distortion);
        if iterations == KMEANS_MAX_ITER {
            return KMeans {
                assignments,
                centroids,
                distortion,
                history,
                iterations,
            };
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| {
                if n == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|x| x / n as f64).collect()
                }
            })
            .collect();
        // Empty cluster: move it to the point farthest from its centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[assignments[*i]] > 1)
                .map(|(i, p)| (i, sq_dist(p, &next[assignments[i]])))
                .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                    Some((_, bd)) if bd >= d => acc,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                next[c] = points[i].clone();
                assignments[i] = c;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < KMEANS_TOL {
            let mut distortion = 0.0;
            for (i, p) in points.iter().enumerate() {
                let (c, d) = nearest(p, &centroids);
                assignments[i] = c;
                distortion += d;
            }
            history.push(distortion);
            return KMeans {
                assignments,
                centroids,
                distortion,
                history,
                iterations,
            };
        }
    }
}

fn centroids_of(points: &[Vec<f64>], assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    (sums, counts)
}

/// Single-point moves that lower the distortion once the centroids follow
/// the move (Hartigan's criterion). Lloyd fixed points are often not
/// stable under these moves.
fn refine(points: &[Vec<f64>], mut km: KMeans) -> KMeans {
    let k = km.centroids.len();
    for _ in 0..KMEANS_MAX_ITER {
        let (mut centroids, mut counts) = centroids_of(points, &km.assignments, k);
        let mut moved = false;
        for (i, x) in points.iter().enumerate() {
            let a = km.assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(x, &centroids[a]);
            let mut best = None;
            let mut best_delta = -1e-12 * (1.0 + removal);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let delta = nb / (nb + 1.0) * sq_dist(x, &centroids[b]) - removal;
                if delta < best_delta {
                    best_delta = delta;
                    best = Some(b);
                }
            }
            if let Some(b) = best {
                let nb = counts[b] as f64;
                for (c, xv) in centroids[a].iter_mut().zip(x) {
                    *c = (na * *c - xv) / (na - 1.0);
                }
                for (c, xv) in centroids[b].iter_mut().zip(x) {
                    *c = (nb * *c + xv) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                km.assignments[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        let (centroids, _) = centroids_of(points, &km.assignments, k);
        let distortion: f64 = points
            .iter()
            .zip(&km.assignments)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        if distortion >= km.distortion {
            break;
        }
        km.centroids = centroids;
        km.distortion = distortion;
        km.history.push(distortion);
    }
    km
}

/// Lloyd's algorithm with farthest-point-style seeding and
/// [`KMEANS_RESTARTS`] restarts, each polished by single-point moves.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    kmeans_with_restarts(points, k, seed, KMEANS_RESTARTS)
}

/// [`kmeans`] with an explicit restart count (at least one run is made).
pub fn kmeans_with_restarts(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount { k, n });
    }
    if let Some(bad) = points.iter().find(|p| p.len() != points[0].len()) {
        return Err(Error::DimensionMismatch(format!(
            "points of dimension {} and {}",
            points[0].len(),
            bad.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for restart in 0..restarts.max(1) {
        let first = rng.gen_range(0..n);
        let seeds = seed_centroids(points, k, first, restart == 0, &mut rng);
        let run = refine(points, lloyd(points, seeds));
        if best.as_ref().is_none_or(|b| run.distortion < b.distortion) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
