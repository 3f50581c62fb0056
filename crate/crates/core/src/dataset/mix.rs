use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, DatasetRecord};

#[derive(Debug, Clone)]
pub struct MixSpec {
    /// Weight of agentic records, in [0, 1].
    pub beta: f64,
    pub agentic: Vec<DatasetRecord>,
    pub general: Vec<DatasetRecord>,
    /// Target size N; the largest size the supply allows when absent.
    pub total: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub records: Vec<DatasetRecord>,
    pub n: usize,
    pub agentic: usize,
    pub general: usize,
    /// True when the requested total exceeded the supply and was reduced.
    pub capped: bool,
}

/// Agentic share of a mix of size `n`: round(beta * n), halves away from
/// zero.
pub fn agentic_share(beta: f64, n: usize) -> usize {
    (beta * n as f64).round() as usize
}

fn feasible(beta: f64, n: usize, agentic: usize, general: usize) -> bool {
    let a = agentic_share(beta, n);
    a <= agentic && n - a <= general
}

/// Samples round(beta * N) agentic and N - round(beta * N) general records
/// without replacement and shuffles the result, all under `seed`.
pub fn mix_datasets(spec: &MixSpec) -> Result<MixOutcome, DatasetError> {
    let beta = spec.beta;
    if !(0.0..=1.0).contains(&beta) || beta.is_nan() {
        return Err(DatasetError::InvalidBeta(beta));
    }
    let (a_avail, g_avail) = (spec.agentic.len(), spec.general.len());
    if beta > 0.0 && a_avail == 0 {
        return Err(DatasetError::EmptyPool("agentic"));
    }
    if beta < 1.0 && g_avail == 0 {
        return Err(DatasetError::EmptyPool("general"));
    }
    let max_n = (0..=a_avail + g_avail)
        .rev()
        .find(|&n| feasible(beta, n, a_avail, g_avail))
        .unwrap_or(0);
    let (n, capped) = match spec.total {
        Some(t) if feasible(beta, t, a_avail, g_avail) => (t, false),
        Some(t) => {
            let n = (0..t).rev().find(|&n| feasible(beta, n, a_avail, g_avail)).unwrap_or(0);
            log::warn!("mix total {t} exceeds supply at beta {beta}; capped to {n}");
            (n, true)
        }
        None => (max_n, false),
    };
    let a = agentic_share(beta, n);
    let g = n - a;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut agentic: Vec<&DatasetRecord> = spec.agentic.iter().collect();
    agentic.shuffle(&mut rng);
    let mut general: Vec<&DatasetRecord> = spec.general.iter().collect();
    general.shuffle(&mut rng);
    let mut records: Vec<DatasetRecord> = agentic[..a].iter().chain(&general[..g]).map(|r| (*r).clone()).collect();
    records.shuffle(&mut rng);
    Ok(MixOutcome {
        records,
        n,
        agentic: a,
        general: g,
        capped,
    })
}
