//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use geotopic::classify::{accuracy, BernoulliNb, Classifier, Dataset, GaussianNb, Knn, KnnModel, MultinomialNb, Trainer};
use geotopic::features::{smooth_avg_block, smooth_concat_block, smooth_weighted};
use geotopic::geo::{AdjacencyGraph, Region, RegionRegistry};
use geotopic::harness::{sweep, ExperimentConfig, Inputs};
use geotopic::labels::{apply_suppression, bin_by_stddev, Label, RateRow, RateTable};
use geotopic::seeds;
use geotopic::topics::{greedy_match, infer_theta, train_lda, LdaConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, t: Instant, r: Outcome) -> Outcome {
    let took = t.elapsed();
    match r {
        Ok(d) if took <= limit => Ok(format!("{d}; {took:.2?} <= {limit:?}")),
        Ok(d) => Err(format!("{d}; too slow: {took:.2?} > {limit:?}")),
        Err(d) => Err(format!("{d}; {took:.2?}")),
    }
}

fn random_baseline() -> Outcome {
    let t = Instant::now();
    let mut rng = seeds::rng(1, "acceptance/random-baseline");
    let normal = Normal::new(50.0, 12.0).unwrap();
    let rates: Vec<(String, f64)> = (0..10_000).map(|i| (format!("{i:05}"), normal.sample(&mut rng))).collect();
    let truth: Vec<Label> = bin_by_stddev(&rates).map_err(|e| e.to_string())?.labels.into_values().collect();
    let guess: Vec<Label> = (0..truth.len()).map(|_| rng.random_range(0..6)).collect();
    let acc = accuracy(&guess, &truth).map_err(|e| e.to_string())?;
    within(Duration::from_secs(1), t, check((acc - 1.0 / 6.0).abs() <= 0.02, format!("accuracy {acc:.4} vs 1/6 ± 0.02")))
}

/// MSE at m = 0 and the best MSE over m > 0 for one replication.
fn smoothing_gain(seed: u64) -> Result<(f64, f64), String> {
    let mut overrides = common::SPARSE.to_vec();
    let s = seed.to_string();
    overrides.push(("seed", &s));
    let cfg = common::config(&overrides);
    let (_, inputs) = Inputs::synthetic(&cfg).map_err(|e| e.to_string())?;
    let rep = sweep(&cfg, inputs).map_err(|e| e.to_string())?;
    if rep.is_partial() {
        return Err(format!("seed {seed}: {:?}", rep.failures));
    }
    let base = rep.rows.iter().find(|r| r.multiplier == 0.0).ok_or("no m = 0 row")?.mse;
    let best = rep.rows.iter().filter(|r| r.multiplier > 0.0).map(|r| r.mse).fold(f64::INFINITY, f64::min);
    Ok((base, best))
}

fn smoothing_helps() -> Outcome {
    let t = Instant::now();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (base, best) = smoothing_gain(seed)?;
        if best < base {
            wins += 1;
        }
        detail.push(format!("{base:.2}->{best:.2}"));
    }
    within(
        Duration::from_secs(600),
        t,
        check(wins >= 8, format!("smoothing beat m = 0 in {wins}/10 replications [{}]", detail.join(" "))),
    )
}

fn mean_accuracy(slang_weight: &str, seeds: std::ops::Range<u64>) -> Result<(f64, f64), String> {
    let (mut base, mut slang) = (0.0, 0.0);
    let n = seeds.end - seeds.start;
    for seed in seeds {
        let s = seed.to_string();
        let cfg = common::config(&[
            ("feature_sets", "baseline,slang"),
            ("classifiers", "knn"),
            ("slang_weight", slang_weight),
            ("synth.rows", "15"),
            ("synth.cols", "15"),
            ("synth.slang_rate_max", "0.3"),
            ("seed", &s),
        ]);
        let (_, inputs) = Inputs::synthetic(&cfg).map_err(|e| e.to_string())?;
        let rep = sweep(&cfg, inputs).map_err(|e| e.to_string())?;
        let acc = |name: &str| rep.rows.iter().find(|r| r.feature_set.name() == name).map(|r| r.accuracy).ok_or(format!("no {name} row"));
        base += acc("baseline")?;
        slang += acc("slang")?;
    }
    Ok((base / n as f64, slang / n as f64))
}

fn slang_overweighting() -> Outcome {
    let (base, heavy) = mean_accuracy("1", 0..5)?;
    let (_, light) = mean_accuracy("0.25", 0..5)?;
    check(
        heavy < base && base - light <= 0.02,
        format!("mean accuracy over 5 seeds: baseline {base:.4}, slang weight 1 {heavy:.4}, slang weight 0.25 {light:.4}"),
    )
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).unwrap();
    let v: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn draw(rng: &mut impl Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn lda_recovery() -> Outcome {
    let t = Instant::now();
    let (k, v, n_docs, len) = (10, 200, 600, 60);
    let mut rng = seeds::rng(4, "acceptance/lda");
    let block = v / k;
    let planted: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let inner = dirichlet(&mut rng, 1.0, block);
            (0..v).map(|w| if w / block == t { inner[w % block] } else { 0.0 }).collect()
        })
        .collect();
    let docs: Vec<Vec<usize>> = (0..n_docs)
        .map(|_| {
            let theta = dirichlet(&mut rng, 0.2, k);
            (0..len)
                .map(|_| {
                    let z = draw(&mut rng, &theta);
                    draw(&mut rng, &planted[z])
                })
                .collect()
        })
        .collect();
    let model = train_lda(&docs, v, &LdaConfig { seed: 4, ..LdaConfig::new(k) }).map_err(|e| e.to_string())?;
    let matched = greedy_match(model.topic_word(), &planted);
    let mean_tv = matched.iter().map(|m| m.2).sum::<f64>() / matched.len() as f64;
    let row_err = model.topic_word().iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let theta_err = docs
        .iter()
        .take(100)
        .enumerate()
        .map(|(i, d)| (infer_theta(&model, d, 50, i as u64).theta.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    within(
        Duration::from_secs(120),
        t,
        check(
            mean_tv < 0.15 && row_err <= 1e-9 && theta_err <= 1e-9,
            format!("mean TV {mean_tv:.4} < 0.15; max row error {row_err:.1e}, theta error {theta_err:.1e}"),
        ),
    )
}

// Independent log-posterior oracles, written from the model definitions.

fn classes_of(y: &[Label]) -> Vec<Label> {
    let mut c = y.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Lowest class whose score is within rounding of the maximum: summing the
/// same terms in another order can split an exact tie by an ulp.
fn first_argmax(scores: &[f64]) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().position(|&s| max - s <= 1e-9 * max.abs().max(1.0)).unwrap()
}

fn oracle_bernoulli(x: &[Vec<f64>], y: &[Label], q: &[f64]) -> Vec<f64> {
    let f = q.len();
    let t = 1.0 / f as f64;
    classes_of(y)
        .into_iter()
        .map(|c| {
            let rows: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
            let mut s = (rows.len() as f64 / y.len() as f64).ln();
            for j in 0..f {
                let on = rows.iter().filter(|r| r[j] > t).count() as f64;
                let p = (on + 1.0) / (rows.len() as f64 + 2.0);
                s += if q[j] > t { p.ln() } else { (1.0 - p).ln() };
            }
            s
        })
        .collect()
}

fn pop_var(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
}

fn oracle_gaussian(x: &[Vec<f64>], y: &[Label], q: &[f64]) -> Vec<f64> {
    let f = q.len();
    let max_var = (0..f).map(|j| pop_var(&x.iter().map(|r| r[j]).collect::<Vec<_>>()).1).fold(0.0, f64::max);
    let floor = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };
    classes_of(y)
        .into_iter()
        .map(|c| {
            let rows: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
            let mut s = (rows.len() as f64 / y.len() as f64).ln();
            for j in 0..f {
                let (m, v) = pop_var(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
                let v = v.max(floor);
                s += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (q[j] - m) * (q[j] - m) / (2.0 * v);
            }
            s
        })
        .collect()
}

fn oracle_multinomial(x: &[Vec<f64>], y: &[Label], q: &[f64]) -> Vec<f64> {
    let f = q.len();
    classes_of(y)
        .into_iter()
        .map(|c| {
            let rows: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
            let counts: Vec<f64> = (0..f).map(|j| rows.iter().map(|r| (r[j] * 1000.0).round()).sum()).collect();
            let total = counts.iter().sum::<f64>() + f as f64;
            let mut s = (rows.len() as f64 / y.len() as f64).ln();
            for j in 0..f {
                s += (q[j] * 1000.0).round() * ((counts[j] + 1.0) / total).ln();
            }
            s
        })
        .collect()
}

type Oracle = fn(&[Vec<f64>], &[Label], &[f64]) -> Vec<f64>;

fn knn_oracle(x: &[Vec<f64>], y: &[Label], k: usize, q: &[f64]) -> (Vec<usize>, Label) {
    let mut d: Vec<(f64, usize)> = x.iter().enumerate().map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i)).collect();
    // Insertion sort: stable, so equal distances keep index order.
    for i in 1..d.len() {
        let mut j = i;
        while j > 0 && d[j - 1].0 > d[j].0 {
            d.swap(j - 1, j);
            j -= 1;
        }
    }
    let idx: Vec<usize> = d[..k].iter().map(|p| p.1).collect();
    let mut votes = [0usize; 6];
    for &i in &idx {
        votes[y[i] as usize] += 1;
    }
    let mut best = 0;
    for l in 1..6 {
        if votes[l] > votes[best] {
            best = l;
        }
    }
    (idx, best as Label)
}

fn classifier_oracles() -> Outcome {
    let mut rng = seeds::rng(5, "acceptance/oracles");
    let mut checked = 0usize;
    for case in 0..300 {
        let f = rng.random_range(1..=3);
        let n_classes = rng.random_range(2..=3);
        let n = rng.random_range((2 * n_classes).max(4)..=8);
        let mut labels: Vec<Label> = (0..6).collect();
        labels.sort_by_key(|_| rng.random::<u32>());
        let y: Vec<Label> = (0..n).map(|i| if i < 2 * n_classes { labels[i / 2] } else { labels[rng.random_range(0..n_classes)] }).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| (rng.random::<f64>() * 100.0).round() / 100.0).collect()).collect();
        let data = Dataset::new(x.clone(), y.clone()).map_err(|e| e.to_string())?;
        let classes = classes_of(&y);
        let models: [(&str, Box<dyn Classifier>, Oracle); 3] = [
            ("bernoulli", BernoulliNb::default().fit(&data).map_err(|e| e.to_string())?, oracle_bernoulli),
            ("gaussian", GaussianNb.fit(&data).map_err(|e| e.to_string())?, oracle_gaussian),
            ("multinomial", MultinomialNb::default().fit(&data).map_err(|e| e.to_string())?, oracle_multinomial),
        ];
        let mut queries = x.clone();
        queries.extend((0..4).map(|_| (0..f).map(|_| (rng.random::<f64>() * 100.0).round() / 100.0).collect()));
        for q in &queries {
            for (name, model, oracle) in &models {
                let want = classes[first_argmax(&oracle(&x, &y, q))];
                let got = model.predict_row(q).map_err(|e| e.to_string())?;
                if got != want {
                    return Err(format!("{name} NB case {case}: predicted {got}, oracle {want} for {q:?}"));
                }
                checked += 1;
            }
        }
    }

    let mut knn_checked = 0;
    for case in 0..100 {
        let n = rng.random_range(5..=30);
        let f = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| rng.random_range(0..5) as f64).collect()).collect();
        let y: Vec<Label> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let k = rng.random_range(1..=n);
        let q: Vec<f64> = (0..f).map(|_| rng.random_range(0..5) as f64).collect();
        let model = KnnModel { k, x: x.clone(), y: y.clone() };
        let (want_idx, want) = knn_oracle(&x, &y, k, &q);
        let fitted = Knn { k }.fit(&Dataset::new(x.clone(), y.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let got = fitted.predict_row(&q).map_err(|e| e.to_string())?;
        if model.neighbors(&q) != want_idx || got != want {
            return Err(format!("knn case {case}: predicted {got}, oracle {want}"));
        }
        knn_checked += 1;
    }
    Ok(format!("{checked} NB predictions and {knn_checked} KNN instances match their oracles"))
}

fn random_simplex(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    dirichlet(rng, 0.7, k)
}

fn smoothing_identities() -> Outcome {
    let mut rng = seeds::rng(6, "acceptance/smoothing");
    // m = 0 through the block path and the single-vector path.
    let regions: Vec<Region> = (0..25)
        .map(|i| Region { id: format!("{i:05}"), lat: 40.0 + (i / 5) as f64 * 0.2, lon: -75.0 + (i % 5) as f64 * 0.2, population: 1000 })
        .collect();
    let graph = AdjacencyGraph::build(&RegionRegistry::new(regions.clone()).unwrap(), 50.0).unwrap();
    let thetas: BTreeMap<String, Vec<f64>> = regions.iter().map(|r| (r.id.clone(), random_simplex(&mut rng, 7))).collect();
    let block = smooth_avg_block(&thetas, &graph, 0.0).map_err(|e| e.to_string())?;
    if block.rows != thetas {
        return Err("m = 0 averaged block differs from the input mixtures".into());
    }
    let concat = smooth_concat_block(&thetas, &graph, 0.0).map_err(|e| e.to_string())?;
    if concat.rows.iter().any(|(id, r)| r[..7] != thetas[id][..] || r[7..].iter().any(|&x| x != 0.0)) {
        return Err("m = 0 concatenated block does not carry the input mixtures".into());
    }

    for k in 5..=200 {
        let th: BTreeMap<String, Vec<f64>> = regions.iter().take(3).map(|r| (r.id.clone(), vec![1.0 / k as f64; k])).collect();
        let w = smooth_concat_block(&th, &graph, 1.0).map_err(|e| e.to_string())?.width();
        if w != 2 * k {
            return Err(format!("concat width {w} for K = {k}"));
        }
    }

    for i in 0..10_000 {
        let k = rng.random_range(2..=20);
        let theta = random_simplex(&mut rng, k);
        let ns: Vec<Vec<f64>> = (0..rng.random_range(0..=8)).map(|_| random_simplex(&mut rng, k)).collect();
        let refs: Vec<&[f64]> = ns.iter().map(Vec::as_slice).collect();
        let m = if i % 10 == 0 { 0.0 } else { rng.random::<f64>() * 10.0 };
        let out = smooth_weighted(&theta, &refs, m).map_err(|e| e.to_string())?;
        if m == 0.0 && out != theta {
            return Err(format!("draw {i}: m = 0 changed the mixture"));
        }
        if out.iter().any(|&x| x < 0.0) || (out.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("draw {i}: left the simplex"));
        }
    }
    Ok("m = 0 bit-exact; width 2K for K = 5..200; 10,000 weighted draws on the simplex".into())
}

fn suppression_rule() -> Outcome {
    let cases = [(4, 99, true), (4, 100, true), (5, 99, true), (5, 100, false)];
    let rows = cases
        .iter()
        .enumerate()
        .map(|(i, &(count, population, _))| RateRow {
            region_id: format!("{i:05}"),
            year: 2016,
            outcome: "hiv".into(),
            rate: 1.0,
            count,
            population,
            suppressed: false,
        })
        .collect();
    let table = apply_suppression(RateTable::new(rows).map_err(|e| e.to_string())?);
    let got: Vec<bool> = table.rows.iter().map(|r| r.suppressed).collect();
    let want: Vec<bool> = cases.iter().map(|c| c.2).collect();
    check(got == want, format!("(count, population) 4/99, 4/100, 5/99, 5/100 suppressed = {got:?}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = common::config(&[
        ("feature_sets", "baseline,smooth,slang,smooth+slang"),
        ("classifiers", "gaussian_nb,knn,random_forest"),
        ("multiplier", "0,1"),
        ("n_trees", "20"),
        ("synth.unlocated_fraction", "0.05"),
        ("synth.suppressed_fraction", "0.05"),
        ("seed", "11"),
    ]);
    let (world, inputs) = Inputs::synthetic(&cfg).map_err(|e| e.to_string())?;
    geotopic::synth::write_all(dir.path(), &world, &inputs.records, &inputs.rates).map_err(|e| e.to_string())?;
    cfg.resolve_paths(dir.path());
    let run = || -> Result<Vec<u8>, String> {
        let rep = sweep(&cfg, Inputs::load(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let (a, b) = (run()?, run()?);
    check(a == b, format!("{} report bytes, identical = {}", a.len(), a == b))
}

fn learnability() -> Outcome {
    let t = Instant::now();
    let cfg: ExperimentConfig =
        common::config(&[("synth.noise_sd", "0"), ("synth.gain", "100"), ("synth.kernel_bandwidth", "0"), ("seed", "3")]);
    let (_, inputs) = Inputs::synthetic(&cfg).map_err(|e| e.to_string())?;
    let out = geotopic::harness::run_pipeline(&cfg, inputs).map_err(|e| e.to_string())?;
    within(
        Duration::from_secs(300),
        t,
        check(out.row.accuracy >= 0.5, format!("Gaussian NB test accuracy {:.4} >= 0.5 over {} regions", out.row.accuracy, out.row.n_regions)),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("random-guess baseline", random_baseline),
        ("smoothing beats m = 0 on sparse corpora", smoothing_helps),
        ("overweighted slang degrades, down-weighted does not", slang_overweighting),
        ("planted topic recovery", lda_recovery),
        ("classifier oracle equivalence", classifier_oracles),
        ("smoothing identities", smoothing_identities),
        ("suppression boundaries", suppression_rule),
        ("byte-identical sweep reports", determinism),
        ("end-to-end learnability", learnability),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("criterion {} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
