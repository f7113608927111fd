//! Cross-validated grid search over KNN settings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fit_scaler_rows, scale_rows};
use crate::knn::{KnnModel, KnnParams, Weighting};
use crate::{argmax, DesignMatrix, ModelError, N_CLASSES};

/// Assigns each row to one of `k` folds, class by class: members of a
/// class are shuffled with `seed` and dealt round-robin.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; y.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    for c in 0..N_CLASSES {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = (offset + pos) % k;
        }
        // continue dealing where the previous class stopped so small classes
        // do not all land in fold 0
        offset = (offset + members.len()) % k;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: KnnParams,
    /// Mean accuracy over folds, in [0, 1].
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: KnnParams,
    pub scores: Vec<GridScore>,
}

/// Tries every `k` in `ks` with both weightings under stratified `folds`-fold
/// cross-validation. Each fold is scaled with a scaler fit on its own
/// training part. Ties go to the earlier candidate (smaller k, uniform).
pub fn knn_grid_search(data: &DesignMatrix, ks: &[usize], folds: usize, seed: u64) -> Result<GridResult, ModelError> {
    data.validate()?;
    if folds < 2 || folds > data.n_rows() {
        return Err(ModelError::Parameter(format!(
            "fold count {folds} must lie in 2..={}",
            data.n_rows()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(ModelError::Parameter("grid k values must be positive".into()));
    }
    let k_max = *ks.iter().max().expect("non-empty");
    let assignment = stratified_folds(&data.y, folds, seed);
    let candidates: Vec<KnnParams> = ks
        .iter()
        .flat_map(|&k| {
            [Weighting::Uniform, Weighting::Distance]
                .into_iter()
                .map(move |weighting| KnnParams { k, weighting })
        })
        .collect();
    let mut acc = vec![0.0; candidates.len()];
    let mut used_folds = 0;
    for f in 0..folds {
        let train: Vec<usize> = (0..data.n_rows()).filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = (0..data.n_rows()).filter(|&i| assignment[i] == f).collect();
        if test.is_empty() || train.is_empty() {
            continue;
        }
        used_folds += 1;
        let tr = data.subset(&train);
        let te = data.subset(&test);
        let scaler = fit_scaler_rows(tr.x.view(), "grid-fold")?;
        let model = KnnModel::fit(
            KnnParams {
                k: k_max,
                weighting: Weighting::Uniform,
            },
            scale_rows(&scaler, tr.x.view())?.view(),
            &tr.y,
        )?;
        let te_x = scale_rows(&scaler, te.x.view())?;
        let neighbors: Vec<Vec<(usize, f64)>> = te_x.rows().into_iter().map(|q| model.neighbors(q)).collect();
        for (ci, cand) in candidates.iter().enumerate() {
            let mut correct = 0usize;
            for (qi, nn) in neighbors.iter().enumerate() {
                let nn = &nn[..cand.k.min(nn.len())];
                let mut votes = [0.0; N_CLASSES];
                let exact = nn.iter().any(|&(_, d)| d == 0.0);
                for &(i, d) in nn {
                    let w = match cand.weighting {
                        Weighting::Uniform => 1.0,
                        Weighting::Distance if exact => f64::from(u8::from(d == 0.0)),
                        Weighting::Distance => 1.0 / d.sqrt(),
                    };
                    votes[tr.y[i]] += w;
                }
                if argmax(&votes) == te.y[qi] {
                    correct += 1;
                }
            }
            acc[ci] += correct as f64 / te.n_rows() as f64;
        }
    }
    let scores: Vec<GridScore> = candidates
        .into_iter()
        .zip(acc)
        .map(|(params, a)| GridScore {
            params,
            mean_accuracy: a / used_folds as f64,
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_accuracy > scores[best].mean_accuracy {
            best = i;
        }
    }
    Ok(GridResult {
        best: scores[best].params.clone(),
        scores,
    })
}
