//! Central finite-difference verification of graph gradients.

use std::fmt::Display;

use serde::Serialize;

use super::{BoundParams, Graph, NumError, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Cap on checked entries per parameter tensor. Entries are taken in
    /// order of decreasing analytic gradient magnitude. `None` checks all.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_entries_per_param: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the reverse-mode gradient of `f` against central differences
/// for every parameter in `params`.
pub fn grad_check<F, E>(mut f: F, params: &ParamStore, opts: GradCheckOptions) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&mut Graph, &BoundParams<'_>) -> Result<Var, E>,
    E: Display,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(NumError::InvalidConfig(format!("grad_check eps {} outside [1e-7, 1e-3]", opts.eps)));
    }
    let analytic = {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let out = f(&mut g, &bound).map_err(|e| NumError::Function(e.to_string()))?;
        if !g.value(out).item().is_finite() {
            return Err(NumError::NonFinite("function value at the unperturbed point".into()));
        }
        let grads = g.backward(out);
        bound.collect_grads(&grads)
    };

    let mut eval = |store: &ParamStore, what: &dyn Fn() -> String| -> Result<f64, NumError> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let out = f(&mut g, &bound).map_err(|e| NumError::Function(e.to_string()))?;
        let v = g.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumError::NonFinite(what()))
        }
    };

    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (p, entry) in params.entries().iter().enumerate() {
        let ga = analytic[p].data();
        let mut order: Vec<usize> = (0..ga.len()).collect();
        if let Some(cap) = opts.max_entries_per_param {
            order.sort_by(|&a, &b| ga[b].abs().total_cmp(&ga[a].abs()).then(a.cmp(&b)));
            order.truncate(cap);
        }
        let mut report = GradCheckEntry {
            name: entry.name.clone(),
            checked: order.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &j in &order {
            let orig = entry.value.data()[j];
            let mut probe = |delta: f64, work: &mut ParamStore| {
                work.entries_mut()[p].value.data_mut()[j] = orig + delta;
                let r = eval(work, &|| format!("{}[{j}] perturbed by {delta:+e}", entry.name));
                work.entries_mut()[p].value.data_mut()[j] = orig;
                r
            };
            let plus = probe(opts.eps, &mut work)?;
            let minus = probe(-opts.eps, &mut work)?;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(ga[j], numeric);
            if err > report.max_rel_err || report.checked == 0 {
                report.max_rel_err = err;
                report.worst_index = j;
                report.analytic = ga[j];
                report.numeric = numeric;
            }
        }
        entries.push(report);
    }
    Ok(GradCheckReport { eps: opts.eps, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{nn, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;
    const SEEDS: u64 = 20;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Runs `build` over fresh random parameters for every seed and checks gradients.
    fn check_seeds(
        shapes: &[(&str, Vec<usize>)],
        mut build: impl FnMut(&mut Graph, &BoundParams<'_>, &mut ChaCha8Rng) -> Result<Var, NumError>,
    ) {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            for (name, shape) in shapes {
                store.insert(*name, rand_tensor(&mut rng, shape), true).unwrap();
            }
            let fseed = rng.random::<u64>();
            let report = grad_check(
                |g, p| {
                    let mut r = ChaCha8Rng::seed_from_u64(fseed);
                    build(g, p, &mut r)
                },
                &store,
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_err() < TOL, "seed {seed}: {:?}", report.worst());
        }
    }

    /// Random projection to a scalar so every output element gets a distinct weight.
    fn project(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Var {
        let w = rand_tensor(rng, g.shape(y));
        let w = g.constant(w);
        let p = g.mul(y, w);
        g.sum(p)
    }

    #[test]
    fn square_sum_exact() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true).unwrap();
        let report = grad_check(
            |g, p| -> Result<Var, NumError> {
                let x = p.get("x");
                let sq = g.mul(x, x);
                Ok(g.sum(sq))
            },
            &store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-6);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let store = ParamStore::new();
        let f = |g: &mut Graph, _: &BoundParams<'_>| -> Result<Var, NumError> { Ok(g.constant(Tensor::scalar(0.0))) };
        assert!(grad_check(f, &store, GradCheckOptions { eps: 1e-2, ..Default::default() }).is_err());
    }

    #[test]
    fn non_finite_value_names_perturbation() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1e-6), true).unwrap();
        // sqrt goes NaN once x is pushed negative
        let err = grad_check(
            |g, p| -> Result<Var, NumError> {
                let x = p.get("x");
                let v = g.value(x).item();
                let c = g.constant(Tensor::scalar(if v < 0.0 { f64::NAN } else { 1.0 }));
                Ok(g.mul(x, c))
            },
            &store,
            GradCheckOptions { eps: 1e-5, ..Default::default() },
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x[0]") && msg.contains("perturbed"), "{msg}");
    }

    #[test]
    fn primitive_matmul_family() {
        check_seeds(&[("a", vec![3, 4]), ("b", vec![4, 2]), ("c", vec![5, 4])], |g, p, r| {
            let ab = g.matmul(p.get("a"), p.get("b"));
            let ac_t = g.matmul_bt(p.get("a"), p.get("c"));
            let t = g.transpose(ac_t);
            let l1 = project(g, ab, r);
            let l2 = project(g, t, r);
            let s = g.add(l1, l2);
            Ok(s)
        });
    }

    #[test]
    fn primitive_elementwise() {
        check_seeds(&[("a", vec![3, 4]), ("b", vec![3, 4]), ("bias", vec![4])], |g, p, r| {
            let m = g.mul(p.get("a"), p.get("b"));
            let s = g.sub(m, p.get("a"));
            let s = g.add_bias(s, p.get("bias"));
            let s = g.scale(s, 1.7);
            let s = g.gelu(s);
            Ok(project(g, s, r))
        });
    }

    #[test]
    fn primitive_softmax_and_layer_norm() {
        check_seeds(&[("x", vec![4, 5]), ("gamma", vec![5]), ("beta", vec![5])], |g, p, r| {
            let sm = g.softmax(p.get("x"));
            let ln = g.layer_norm(p.get("x"), p.get("gamma"), p.get("beta"), 1e-5);
            let a = project(g, sm, r);
            let b = project(g, ln, r);
            Ok(g.add(a, b))
        });
    }

    #[test]
    fn primitive_embedding_gather_scatter_concat() {
        check_seeds(&[("table", vec![6, 3]), ("x", vec![4, 3])], |g, p, r| {
            let ids: Vec<usize> = (0..5).map(|_| r.random_range(0..6)).collect();
            let e = g.embedding(p.get("table"), &ids)?;
            let gx = g.gather_rows(p.get("x"), &[3, 0, 0]);
            let sc = g.scatter_rows(gx, &[1, 4, 2], 6);
            let cat = g.concat_rows(&[e, sc]);
            let cols = g.concat_cols(&[cat, cat]);
            let sl = g.slice_cols(cols, 2, 3);
            Ok(project(g, sl, r))
        });
    }

    #[test]
    fn primitive_conv2d_stride2() {
        check_seeds(&[("x", vec![2, 7, 6]), ("w", vec![3, 2, 3, 3]), ("b", vec![3])], |g, p, r| {
            let y = g.conv2d(p.get("x"), p.get("w"), p.get("b"), 2, 1)?;
            Ok(project(g, y, r))
        });
    }

    #[test]
    fn primitive_conv_transpose2d() {
        check_seeds(&[("x", vec![2, 3, 4]), ("w", vec![2, 3, 4, 4]), ("b", vec![3])], |g, p, r| {
            let y = g.conv_transpose2d(p.get("x"), p.get("w"), p.get("b"), 2, 1)?;
            let z = g.conv_transpose2d(p.get("x"), p.get("w"), p.get("b"), 4, 0)?;
            let a = project(g, y, r);
            let b = project(g, z, r);
            Ok(g.add(a, b))
        });
    }

    #[test]
    fn primitive_adaptive_pool_and_reshape() {
        check_seeds(&[("x", vec![2, 9, 8])], |g, p, r| {
            let y = g.adaptive_avg_pool(p.get("x"), 7, 7)?;
            let y = g.reshape(y, &[2, 49])?;
            Ok(project(g, y, r))
        });
    }

    #[test]
    fn primitive_attention_with_bias() {
        check_seeds(&[("q", vec![4, 3]), ("k", vec![5, 3]), ("v", vec![5, 2]), ("bias", vec![4, 5])], |g, p, r| {
            let y = nn::scaled_dot_attention(g, p.get("q"), p.get("k"), p.get("v"), Some(p.get("bias")));
            Ok(project(g, y, r))
        });
    }

    #[test]
    fn primitive_l2_normalize_and_row_max() {
        check_seeds(&[("x", vec![4, 3]), ("y", vec![5, 3])], |g, p, r| {
            let a = g.l2_normalize(p.get("x"));
            let b = g.l2_normalize(p.get("y"));
            let s = g.matmul_bt(a, b);
            let m = g.row_max(s);
            let mm = g.mean(m);
            let pa = project(g, a, r);
            Ok(g.add(mm, pa))
        });
    }

    #[test]
    fn primitive_losses() {
        check_seeds(&[("logits", vec![5, 4]), ("pred", vec![3, 3])], |g, p, r| {
            let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
            let ignore = [false, true, false, false, true];
            let ce = g.cross_entropy_mean(p.get("logits"), &labels, &ignore)?;
            let target = rand_tensor(r, &[3, 3]);
            let mask: Vec<bool> = (0..9).map(|i| i % 3 != 1).collect();
            let l1 = g.l1_masked_mean(p.get("pred"), &target, &mask)?;
            Ok(g.add(ce, l1))
        });
    }
}
