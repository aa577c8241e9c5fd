//! The transfer experiment: sample selection, crafting on sources,
//! evaluation on targets, repeat-averaging, and matrix assembly.

use crate::attacks::{run_attack, uap, uap_batch, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::permutation;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// One (source, target) evaluation pairing with its selected sample indices.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub source_id: String,
    pub target_id: String,
    /// Selected dataset indices; every one is classified correctly by both
    /// the source and the target model.
    pub indices: Vec<usize>,
}

/// Sources x targets grid of adversarial accuracy with a trailing Average
/// column (the mean of the row's target cells).
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub row_labels: Vec<String>,
    /// Target labels plus a final "Average".
    pub col_labels: Vec<String>,
    /// rows x (targets + 1), Average cell last in each row.
    pub cells: Vec<Vec<f64>>,
    pub repeats: usize,
    pub seed: u64,
}

impl TransferMatrix {
    pub fn n_targets(&self) -> usize {
        self.col_labels.len() - 1
    }

    /// Per-source Average column.
    pub fn averages(&self) -> Vec<f64> {
        self.cells.iter().map(|row| *row.last().unwrap()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.col_labels.last().map(String::as_str) != Some("Average") {
            return Err(Error::Domain("last column must be Average".into()));
        }
        for (r, row) in self.cells.iter().enumerate() {
            if row.len() != self.col_labels.len() {
                return Err(Error::Shape(format!("row {r} has {} cells", row.len())));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain(format!("row {r} has cells outside [0,1]")));
            }
            let n = self.n_targets();
            let mean: f64 = row[..n].iter().sum::<f64>() / n as f64;
            if (mean - row[n]).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "row {r} Average {} differs from recomputed {mean}",
                    row[n]
                )));
            }
        }
        Ok(())
    }

    pub fn diagonal_mean(&self) -> f64 {
        let n = self.row_labels.len().min(self.n_targets());
        (0..n).map(|i| self.cells[i][i]).sum::<f64>() / n as f64
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (r, row) in self.cells.iter().enumerate() {
            for (c, &v) in row[..self.n_targets()].iter().enumerate() {
                if r != c {
                    sum += v;
                    count += 1;
                }
            }
        }
        sum / count.max(1) as f64
    }
}

/// k indices drawn uniformly without replacement from the samples correct
/// under both models: a seeded permutation of the dataset restricted to the
/// jointly-correct subset. The permutation depends only on the seed, so
/// pairs sharing a source mostly select the same samples.
pub fn select_samples(
    source: &Model,
    target: &Model,
    data: &Dataset,
    k: usize,
    seed: u64,
) -> Result<EvalPair> {
    let src_mask = correct_mask(source, data)?;
    let tgt_mask = if std::ptr::eq(source, target) {
        src_mask.clone()
    } else {
        correct_mask(target, data)?
    };
    select_from_masks(
        source.id().to_string(),
        target.id().to_string(),
        &src_mask,
        &tgt_mask,
        data.len(),
        k,
        seed,
    )
}

fn select_from_masks(
    source_id: String,
    target_id: String,
    src_mask: &[bool],
    tgt_mask: &[bool],
    n: usize,
    k: usize,
    seed: u64,
) -> Result<EvalPair> {
    let order = permutation(seed, n);
    let indices: Vec<usize> = order
        .into_iter()
        .filter(|&i| src_mask[i] && tgt_mask[i])
        .take(k)
        .collect();
    if indices.len() < k {
        let available = (0..n).filter(|&i| src_mask[i] && tgt_mask[i]).count();
        return Err(Error::Selection { requested: k, available });
    }
    Ok(EvalPair { source_id, target_id, indices })
}

/// Per-sample correctness of a model over a dataset.
pub fn correct_mask(model: &Model, data: &Dataset) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (batch, labels) = data.gather(chunk);
        let preds = model.predict(&batch)?;
        mask.extend(preds.iter().zip(labels.iter()).map(|(p, l)| p == l));
    }
    Ok(mask)
}

/// Fraction of adversarial samples the target still classifies correctly.
pub fn adversarial_accuracy(target: &Model, adv: &Tensor, labels: &[usize]) -> Result<f64> {
    if adv.batch() == 0 {
        return Err(Error::Domain("empty adversarial batch".into()));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..adv.batch()).collect();
    for chunk in idx.chunks(256) {
        let rows: Vec<Tensor> = chunk.iter().map(|&i| adv.row_tensor(i)).collect();
        let batch = Tensor::stack_rows(&rows)?;
        let preds = target.predict(&batch)?;
        correct += chunk
            .iter()
            .zip(preds.iter())
            .filter(|(&i, &p)| p == labels[i])
            .count();
    }
    Ok(correct as f64 / adv.batch() as f64)
}

/// One cell-repeat observation for the run manifest.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub source: String,
    pub target: String,
    pub repeat: usize,
    pub selection_seed: u64,
    pub accuracy: f64,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TransferRun {
    pub matrix: TransferMatrix,
    pub records: Vec<CellRecord>,
}

/// Bitwidth-style label for matrix headers; falls back to id-bits when the
/// roster mixes architectures at the same bitwidth.
fn model_labels(models: &[&Model]) -> Vec<String> {
    let bit_labels: Vec<String> = models
        .iter()
        .map(|m| m.quant().weight_bits.label())
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    let unique = bit_labels.iter().all(|l| seen.insert(l.clone()));
    if unique {
        bit_labels
    } else {
        models
            .iter()
            .map(|m| format!("{}-{}", m.id(), m.quant().weight_bits.label()))
            .collect()
    }
}

/// The full experiment. For each (source, target) cell: `repeats` rounds of
/// select -> craft on source -> measure adversarial accuracy on target,
/// averaged. Repeat r uses selection and attack seed `seed + r`; per-sample
/// attack randomness is streamed by dataset index, so a sample crafted once
/// on a source is reused for every target that selects it (except UAP,
/// whose perturbation is a function of the whole selected set).
pub fn run_transfer(
    sources: &[&Model],
    targets: &[&Model],
    attack: &AttackConfig,
    data: &Dataset,
    repeats: usize,
    samples: usize,
    seed: u64,
) -> Result<TransferRun> {
    attack.validate()?;
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::Roster("transfer needs at least one source and one target".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    for m in sources.iter().chain(targets.iter()) {
        if m.input_shape() != data.sample_shape() {
            return Err(Error::Shape(format!(
                "model {} input {:?} does not match data shape {:?}",
                m.id(),
                m.input_shape(),
                data.sample_shape()
            )));
        }
    }

    let row_labels = model_labels(sources);
    let mut col_labels = model_labels(targets);

    // Correctness masks, deduplicated when a model appears in both lists.
    let mut masks: Vec<(*const Model, Vec<bool>)> = Vec::new();
    let mut mask_of = |m: &Model| -> Result<Vec<bool>> {
        let ptr = m as *const Model;
        if let Some((_, mask)) = masks.iter().find(|(p, _)| std::ptr::eq(*p, ptr)) {
            return Ok(mask.clone());
        }
        let mask = correct_mask(m, data)?;
        masks.push((ptr, mask.clone()));
        Ok(mask)
    };
    let src_masks: Vec<Vec<bool>> = sources
        .iter()
        .map(|m| mask_of(m))
        .collect::<Result<_>>()?;
    let tgt_masks: Vec<Vec<bool>> = targets
        .iter()
        .map(|m| mask_of(m))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut sums = vec![vec![0.0f64; targets.len()]; sources.len()];

    for r in 0..repeats {
        let round_seed = seed.wrapping_add(r as u64);
        for (si, source) in sources.iter().enumerate() {
            // Selected indices per target for this source and repeat.
            let pairs: Vec<EvalPair> = (0..targets.len())
                .map(|ti| {
                    select_from_masks(
                        row_labels[si].clone(),
                        col_labels[ti].clone(),
                        &src_masks[si],
                        &tgt_masks[ti],
                        data.len(),
                        samples,
                        round_seed,
                    )
                })
                .collect::<Result<_>>()?;

            // Craft each needed sample once (UAP excepted: its perturbation
            // depends on the whole selected set, so it is built per cell).
            let mut crafted: BTreeMap<usize, (Vec<f32>, bool)> = BTreeMap::new();
            if !matches!(attack, AttackConfig::Uap(_)) {
                let mut union: Vec<usize> = pairs.iter().flat_map(|p| p.indices.iter().copied()).collect();
                union.sort_unstable();
                union.dedup();
                let (batch, labels) = data.gather(&union);
                let adv = run_attack(source, &batch, &labels, &union, attack, round_seed)?;
                adv.validate_budget()?;
                for (pos, &ds_idx) in union.iter().enumerate() {
                    crafted.insert(
                        ds_idx,
                        (adv.adversarial.row(pos).to_vec(), adv.source_success[pos]),
                    );
                }
            }

            for (ti, target) in targets.iter().enumerate() {
                let pair = &pairs[ti];
                let accuracy = if let AttackConfig::Uap(p) = attack {
                    let (batch, labels) = data.gather(&pair.indices);
                    let (v, _rate) = uap(source, &batch, &labels, p)?;
                    let adv = uap_batch(source, &batch, &labels, &v, p)?;
                    adv.validate_budget()?;
                    let truth: Vec<usize> = (0..pair.indices.len()).map(|i| labels[i]).collect();
                    adversarial_accuracy(target, &adv.adversarial, &truth)?
                } else {
                    let mut shape = data.images().shape().to_vec();
                    shape[0] = pair.indices.len();
                    let mut adv = Tensor::zeros(&shape);
                    let mut truth = Vec::with_capacity(pair.indices.len());
                    for (o, &ds_idx) in pair.indices.iter().enumerate() {
                        let (row, _) = &crafted[&ds_idx];
                        adv.row_mut(o).copy_from_slice(row);
                        truth.push(data.label(ds_idx));
                    }
                    adversarial_accuracy(target, &adv, &truth)?
                };
                sums[si][ti] += accuracy;
                records.push(CellRecord {
                    source: row_labels[si].clone(),
                    target: col_labels[ti].clone(),
                    repeat: r,
                    selection_seed: round_seed,
                    accuracy,
                    indices: pair.indices.clone(),
                });
            }
        }
    }

    let cells: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|row| {
            let mut row: Vec<f64> = row.into_iter().map(|s| s / repeats as f64).collect();
            let avg = row.iter().sum::<f64>() / row.len() as f64;
            row.push(avg);
            row
        })
        .collect();
    col_labels.push("Average".to_string());

    let matrix = TransferMatrix {
        row_labels,
        col_labels,
        cells,
        repeats,
        seed,
    };
    matrix.validate()?;
    Ok(TransferRun { matrix, records })
}

/// Spearman rank correlation between the per-source Average columns.
pub fn rank_correlation(m1: &TransferMatrix, m2: &TransferMatrix) -> Result<f64> {
    let a = m1.averages();
    let b = m2.averages();
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "matrices have {} and {} sources",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Domain("need at least two sources to rank".into()));
    }
    spearman(&a, &b)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank for ties, 1-based.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    let ra = ranks(a);
    let rb = ranks(b);
    if ra == rb {
        return Ok(1.0);
    }
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(rb.iter()) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    if da == 0.0 || db == 0.0 {
        // One ranking is constant and the other is not: no monotone
        // association to speak of.
        return Ok(0.0);
    }
    Ok(num / (da * db).sqrt())
}
