use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::EvalError;
use crate::protolearn::{Featurizer, ProtoModel};
use crate::rng::rng_for;
use crate::taskforge::RubricDataset;
use crate::tensor::ParamStore;

const TOL: f64 = 1e-8;
const MAX_ITERS: usize = 1000;

/// Projection onto the top two principal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2d {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component (covariance normalized by `n - 1`).
    pub explained: [f64; 2],
    /// The second direction carries no variance (rank-1 data).
    pub second_degenerate: bool,
}

fn matvec(c: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|i| (0..d).map(|j| c[i * d + j] * v[j]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair by power iteration, starting orthogonal to `avoid`.
fn power(c: &[f64], d: usize, avoid: Option<&[f64]>, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = rng_for(seed, &[]);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let orth = |v: &mut Vec<f64>| {
        if let Some(a) = avoid {
            let p = dot(v, a);
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
        }
    };
    orth(&mut v);
    normalize(&mut v);
    for _ in 0..MAX_ITERS {
        let mut w = matvec(c, &v);
        orth(&mut w);
        if normalize(&mut w) == 0.0 {
            return (v, 0.0);
        }
        let diff = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        if diff < TOL {
            break;
        }
    }
    let lambda = dot(&v, &matvec(c, &v));
    (v, lambda)
}

/// Mean-centers `vectors` and projects them onto two principal directions
/// found by power iteration with deflation.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Pca2d, EvalError> {
    let n = vectors.len();
    let d = vectors.first().map_or(0, Vec::len);
    if n < 2 || d < 2 || vectors.iter().any(|v| v.len() != d) {
        return Err(EvalError::InvalidArgument(format!(
            "PCA needs at least 2 vectors of equal dimension at least 2, got {n}x{d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / n as f64);
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for v in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += v[i] * v[j];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if trace <= 0.0 {
        return Err(EvalError::DegenerateCovariance);
    }
    let (v1, l1) = power(&cov, d, None, 1);
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (mut v2, mut l2) = power(&deflated, d, Some(&v1), 2);
    let second_degenerate = l2 <= 1e-12 * trace;
    if second_degenerate {
        l2 = 0.0;
        // Any unit direction orthogonal to the first.
        let k = (0..d)
            .min_by(|&a, &b| v1[a].abs().total_cmp(&v1[b].abs()))
            .unwrap_or(0);
        v2 = (0..d)
            .map(|i| f64::from(u8::from(i == k)) - v1[k] * v1[i])
            .collect();
        normalize(&mut v2);
    }
    let coords = centered
        .iter()
        .map(|v| [dot(v, &v1), dot(v, &v2)])
        .collect();
    Ok(Pca2d {
        coords,
        components: [v1, v2],
        explained: [l1, l2.max(0.0)],
        second_degenerate,
    })
}

/// Embeds every distinct program of `data` (with its question prompt as side
/// text) and writes `id\tx\ty` rows of the 2-D projection.
pub fn export_embeddings(
    model: &ProtoModel,
    params: &ParamStore<f32>,
    featurizer: &Featurizer,
    data: &RubricDataset,
    path: &Path,
) -> Result<Pca2d, EvalError> {
    let prompts: std::collections::HashMap<String, String> = data
        .records
        .iter()
        .map(|r| (r.question_id.clone(), r.prompt_text.clone()))
        .collect();
    let mut ids = Vec::new();
    let mut vectors = Vec::new();
    for (qid, programs) in data.programs_by_question() {
        let (prompt, rubric) = featurizer.side_ids(&prompts[&qid], "");
        let mut seqs = Vec::new();
        for (i, src) in programs.iter().enumerate() {
            match crate::lexnorm::lex_normalize(src, &featurizer.lex) {
                Ok(tokens) => {
                    seqs.push(featurizer.program_ids(&tokens, None)?);
                    ids.push(format!("{qid}#{i}"));
                }
                Err(e) => log::warn!("skipping program {qid}#{i}: {e}"),
            }
        }
        vectors.extend(model.embed(params, &seqs, &prompt, &rubric)?);
    }
    let pca = pca_2d(&vectors)?;
    let mut out = String::from("id\tx\ty\n");
    for (id, [x, y]) in ids.iter().zip(&pca.coords) {
        writeln!(out, "{id}\t{x:.6}\t{y:.6}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_flag_second_component() {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)])
            .collect();
        let p = pca_2d(&pts).unwrap();
        assert!(p.second_degenerate);
        assert_eq!(p.explained[1], 0.0);
        assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-6);
        assert!(p.coords.iter().all(|c| c[1].abs() < 1e-9));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pca_2d(&[vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(EvalError::DegenerateCovariance)
        ));
        assert!(pca_2d(&[vec![1.0, 2.0]]).is_err());
        assert!(pca_2d(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn axis_aligned_spread() {
        let pts = vec![
            vec![3.0, 0.0, 0.0],
            vec![-3.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
        ];
        let p = pca_2d(&pts).unwrap();
        assert!((p.explained[0] - 6.0).abs() < 1e-9);
        assert!((p.explained[1] - 2.0 / 3.0).abs() < 1e-9);
        assert!((p.components[0][0].abs() - 1.0).abs() < 1e-9);
    }
}
