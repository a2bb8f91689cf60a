//! Built-in diagnostics behind the `selftest` subcommand: gradient checks on
//! tiny models and cross-checks of the combinatorial routines against
//! brute force.

use crate::cellspace::{decision_schema, random_architecture, space_size, Architecture, SearchSpace};
use crate::childnet::{init_pool, lm_step, ChildDims, TokenBatch};
use crate::controller::{init_controller, log_prob_grad, supervised_grad, teacher_forced_log_prob, ControllerDims};
use crate::error::Result;
use crate::numkit::{finite_diff_check, Matrix, Rng};
use crate::replay::{ReplayBuffer, ReplaySchedule};
use crate::simlab::{ged, spearman};

const FD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn line(name: &'static str, passed: bool, detail: String) -> CheckLine {
    CheckLine { name, passed, detail }
}

fn tiny_controller(rng: &mut Rng) -> Result<crate::controller::ControllerParams> {
    let dims = ControllerDims {
        embed_dim: 5,
        hidden_dim: 8,
    };
    let mut p = init_controller(rng, SearchSpace::new(3)?, dims)?;
    let flat: Vec<f64> = p.flatten().iter().map(|w| w * 10.0).collect();
    p.set_flat(&flat);
    Ok(p)
}

fn controller_log_prob(rng: &mut Rng) -> Result<f64> {
    let params = tiny_controller(rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let arch = random_architecture(rng, &params.space);
        let (_, g) = log_prob_grad(&params, &arch)?;
        let mut probe = params.clone();
        let err = finite_diff_check(
            |x| {
                probe.set_flat(x);
                teacher_forced_log_prob(&probe, &arch).map_or(f64::NAN, |f| f.total)
            },
            &params.flatten(),
            &g.flatten(),
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn controller_supervised(rng: &mut Rng) -> Result<f64> {
    let params = tiny_controller(rng)?;
    let archs: Vec<Architecture> = (0..4).map(|_| random_architecture(rng, &params.space)).collect();
    let (_, g) = supervised_grad(&params, &archs)?;
    let mut probe = params.clone();
    finite_diff_check(
        |x| {
            probe.set_flat(x);
            supervised_grad(&probe, &archs).map_or(f64::NAN, |r| r.0)
        },
        &params.flatten(),
        &g.flatten(),
        FD_STEP,
    )
}

fn child_bptt(rng: &mut Rng) -> Result<f64> {
    let dims = ChildDims {
        embed_dim: 4,
        hidden_dim: 6,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let mut pool = init_pool(rng, SearchSpace::new(3)?, dims, 7)?;
        let flat: Vec<f64> = pool.flatten().iter().map(|w| w * 8.0).collect();
        pool.set_flat(&flat);
        let arch = random_architecture(rng, &pool.space);
        let rows: Vec<Vec<usize>> = (0..2).map(|_| (0..4).map(|_| rng.below(7)).collect()).collect();
        let refs: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
        let batch = TokenBatch::new(&refs)?;
        let h0 = Matrix::uniform(rng, 2, 6, 0.5);
        let step = lm_step(&pool, &arch, &batch, &h0)?;
        let mut probe = pool.clone();
        let err = finite_diff_check(
            |x| {
                probe.set_flat(x);
                lm_step(&probe, &arch, &batch, &h0).map_or(f64::NAN, |s| s.loss)
            },
            &pool.flatten(),
            &step.grads.flatten_like(&pool),
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Counts every action sequence the schema admits.
fn enumerate_space(space: &SearchSpace) -> u64 {
    decision_schema(space).iter().map(|s| s.choices as u64).product()
}

fn brute_ged(a: &Architecture, b: &Architecture) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == perm.len() {
            out.push(perm.clone());
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, out);
            perm.swap(k, i);
        }
    }
    let n = a.n_nodes;
    let mut perms = Vec::new();
    permute(0, &mut (0..n).collect(), &mut perms);
    let ea = a.edge_set();
    let eb = b.edge_set();
    perms
        .iter()
        .map(|pi| {
            let labels = (1..=n).filter(|&i| a.activation(i) != b.activation(pi[i - 1] + 1)).count();
            let kept = ea.iter().filter(|&&(p, i)| eb.contains(&(pi[p - 1] + 1, pi[i - 1] + 1))).count();
            labels + ea.len() + eb.len() - 2 * kept
        })
        .min()
        .unwrap_or(0) as f64
}

fn direct_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let less = v.iter().filter(|&&y| y < x).count() as f64;
                let eq = v.iter().filter(|&&y| y == x).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Runs every check; a check that cannot run reports its error as a failure.
pub fn selftest() -> Vec<CheckLine> {
    let mut rng = Rng::new(0x5e1f_7e57);
    let mut out = Vec::new();
    let fd = |name, r: Result<f64>| match r {
        Ok(e) => line(name, e < FD_TOL, format!("max relative error {e:.3e}")),
        Err(e) => line(name, false, e.to_string()),
    };
    out.push(fd("controller log-prob gradient", controller_log_prob(&mut rng)));
    out.push(fd("supervised loss gradient", controller_supervised(&mut rng)));
    out.push(fd("child BPTT gradient", child_bptt(&mut rng)));

    let s4 = SearchSpace { n_nodes: 4 };
    let s12 = SearchSpace { n_nodes: 12 };
    let size12 = space_size(&s12).to_string();
    let size4 = space_size(&s4).to_string();
    out.push(line(
        "search-space size",
        size12 == "669692775628800" && size4 == enumerate_space(&s4).to_string(),
        format!("n=12: {size12}, n=4: {size4}"),
    ));

    let mut mismatches = 0;
    for _ in 0..50 {
        let space = SearchSpace {
            n_nodes: 1 + rng.below(5),
        };
        let a = random_architecture(&mut rng, &space);
        let b = random_architecture(&mut rng, &space);
        if ged(&a, &b).ok() != Some(brute_ged(&a, &b)) {
            mismatches += 1;
        }
    }
    out.push(line(
        "edit distance vs permutations",
        mismatches == 0,
        format!("{mismatches} of 50 pairs differ"),
    ));

    let mut worst: f64 = 0.0;
    let mut failed = false;
    for _ in 0..50 {
        let n = 3 + rng.below(20);
        let xs: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        match spearman(&xs, &ys) {
            Ok(r) => worst = worst.max((r - direct_spearman(&xs, &ys)).abs()),
            Err(_) => failed |= xs.iter().any(|&x| x != xs[0]),
        }
    }
    out.push(line(
        "spearman vs direct ranks",
        !failed && worst < 1e-12,
        format!("max deviation {worst:.1e}"),
    ));

    let sizes: Result<Vec<usize>> = (|| {
        let mut buf = ReplayBuffer::new(ReplaySchedule::default())?;
        let space = SearchSpace { n_nodes: 4 };
        let mut sizes = Vec::new();
        for epoch in 0..16 {
            let fresh: Vec<Architecture> = (0..buf.fresh_needed(epoch))
                .map(|_| random_architecture(&mut rng, &space))
                .collect();
            buf.tick(epoch, &fresh, &mut rng)?;
            sizes.push(buf.len());
        }
        Ok(sizes)
    })();
    let want: Vec<usize> = (0..16).map(|e| ReplaySchedule::default().size_after(e)).collect();
    out.push(match sizes {
        Ok(s) => line("replay schedule", s == want && s[14] == 10_000, format!("sizes {s:?}")),
        Err(e) => line("replay schedule", false, e.to_string()),
    });
    out
}
