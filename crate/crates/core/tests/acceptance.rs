//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Built with `harness = false`.

use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use caps_core::codec::{make_target, train_codec_with, CodecConfig, CodecParams, TargetSequence};
use caps_core::collector::{augment_records, collect_records};
use caps_core::diff::{finite_diff_grad, finite_diff_params, max_relative_error, Tape, Tensor, Var};
use caps_core::forest::{EvalConfig, SubsetEvaluator};
use caps_core::pipeline::{
    collect_stage, load_evaluator, run_pipeline, search_stage, train_stage, CollectorConfig, RunConfig,
};
use caps_core::rng::SeededRng;
use caps_core::search::{clip, compute_reward, discounted_returns, SearchConfig};
use caps_core::synth::{planted_three_of_twelve, smoke_binary};
use caps_core::FeatureSubset;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

// ---------------------------------------------------------------- 1

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

type Build = fn(&mut Tape<'_>, &[Var]) -> Var;
type OpCase = (&'static str, Vec<(usize, usize)>, Build);

fn op_error(shapes: &[(usize, usize)], build: Build, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|&(r, c)| Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap())
        .collect();
    let eval = |ts: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.input(t.clone(), true)).collect();
        let y = build(&mut tape, &vars);
        let shape = tape.value(y).shape().to_vec();
        let n = tape.value(y).len();
        let mut wr = SeededRng::new(seed ^ 0xabc);
        let w = Tensor::new(shape, (0..n).map(|_| wr.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let w = tape.constant(w);
        let p = tape.mul(y, w).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        let grads = vars.iter().zip(ts).map(|(&v, t)| g.get_or_zeros(v, t.len())).collect();
        (tape.value(loss).item(), grads)
    };
    let (_, analytic) = eval(&inputs);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut ts = inputs.clone();
                ts[k] = Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap();
                eval(&ts).0
            },
            t.data(),
            H,
        );
        worst = worst.max(max_relative_error(&analytic[k], &numeric));
    }
    worst
}

fn tiny_codec(seed: u64) -> CodecParams {
    CodecParams::init(CodecConfig {
        num_features: 9,
        d: 8,
        heads: 2,
        inducing: 4,
        max_len: 6,
        rff_hidden: 16,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn codec_loss_error(seed: u64) -> f64 {
    let mut params = tiny_codec(seed);
    let subset = FeatureSubset::from_ids([0, 3, 4, 8]);
    let order = [4, 8, 0, 3];
    let target = make_target(&subset, 6, 9).unwrap();
    let mut analytic = params.store().zeros_like();
    {
        let mut g = params.graph();
        let loss = g.loss(&order, &target).unwrap();
        let back = g.tape.backward(loss).unwrap();
        g.bound().accumulate(&back, &mut analytic);
    }
    let loss_at = |store: &caps_core::diff::ParamStore, base: &CodecParams, t: &TargetSequence| {
        let mut p = base.clone();
        *p.store_mut() = store.clone();
        p.reconstruction_loss(&order, t).unwrap()
    };
    let base = params.clone();
    let numeric = finite_diff_params(|s| loss_at(s, &base, &target), params.store_mut(), H);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n))
        .fold(0.0, f64::max)
}

fn criterion_1() -> Result<String, String> {
    let start = Instant::now();
    let ops: Vec<OpCase> = vec![
        ("matmul", vec![(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ("matmul_nt", vec![(3, 4), (5, 4)], |t, v| {
            t.matmul_nt(v[0], v[1]).unwrap()
        }),
        ("add", vec![(2, 3), (2, 3)], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", vec![(2, 3), (2, 3)], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![(2, 3), (2, 3)], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("minimum", vec![(2, 3), (2, 3)], |t, v| t.minimum(v[0], v[1]).unwrap()),
        ("scale", vec![(2, 3)], |t, v| t.scale(v[0], -1.7)),
        ("add_scalar", vec![(2, 3)], |t, v| t.add_scalar(v[0], 0.3)),
        ("exp", vec![(2, 3)], |t, v| t.exp(v[0])),
        ("square", vec![(2, 3)], |t, v| t.square(v[0])),
        ("relu", vec![(3, 3)], |t, v| t.relu(v[0])),
        ("clamp", vec![(3, 3)], |t, v| t.clamp(v[0], -0.4, 0.4)),
        ("add_row", vec![(3, 4), (1, 4)], |t, v| t.add_row(v[0], v[1]).unwrap()),
        ("mul_row", vec![(3, 4), (1, 4)], |t, v| t.mul_row(v[0], v[1]).unwrap()),
        ("sum", vec![(3, 4)], |t, v| t.sum(v[0])),
        ("mean", vec![(3, 4)], |t, v| t.mean(v[0])),
        ("row_sums", vec![(3, 4)], |t, v| t.row_sums(v[0])),
        ("col_means", vec![(3, 4)], |t, v| t.col_means(v[0])),
        ("row_softmax", vec![(3, 5)], |t, v| t.row_softmax(v[0])),
        ("layer_norm", vec![(3, 5), (1, 5), (1, 5)], |t, v| {
            t.layer_norm(v[0], v[1], v[2]).unwrap()
        }),
        ("slice_cols", vec![(3, 5)], |t, v| t.slice_cols(v[0], 1, 3).unwrap()),
        ("concat_cols", vec![(3, 2), (3, 3)], |t, v| {
            t.concat_cols(&[v[0], v[1], v[0]]).unwrap()
        }),
        ("lookup_rows", vec![(4, 3)], |t, v| {
            t.lookup_rows(v[0], &[2, 0, 2, 3]).unwrap()
        }),
        ("cross_entropy", vec![(3, 5)], |t, v| {
            t.cross_entropy_logits(v[0], &[4, 0, 2]).unwrap()
        }),
    ];
    let mut worst = (0.0f64, "");
    for (name, shapes, build) in &ops {
        for seed in 0..5 {
            let e = op_error(shapes, *build, 500 + seed);
            if e > worst.0 {
                worst = (e, name);
            }
        }
    }
    let codec = (0..3).map(|s| codec_loss_error(40 + s)).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(
        worst.0 <= GRAD_TOL && codec <= GRAD_TOL && elapsed < Duration::from_secs(60),
        format!(
            "{} ops, worst op rel err {:.2e} ({}), codec loss rel err {codec:.2e}, {:.1}s",
            ops.len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Result<String, String> {
    let params = CodecParams::init(
        CodecConfig {
            num_features: 20,
            d: 16,
            heads: 4,
            inducing: 8,
            seed: 3,
            ..Default::default()
        }
        .resolved(),
    )
    .unwrap();
    let mut rng = SeededRng::new(11);
    let (mut enc, mut pooled, mut logits) = (0.0f64, 0.0f64, 0.0f64);
    let mut decode_mismatch = 0;
    for _ in 0..100 {
        let len = 1 + rng.below(20);
        let base = rng.sample_indices(20, len);
        let e0 = params.encode(&base).unwrap();
        let z0 = params.pma(&e0.rows).unwrap();
        let l0 = params.decode_logits(&e0.rows).unwrap();
        let s0 = params.decode(&e0.rows).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut perm);
            let order: Vec<usize> = perm.iter().map(|&p| base[p]).collect();
            let e = params.encode(&order).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                for (a, b) in e.rows.row(i).iter().zip(e0.rows.row(p)) {
                    enc = enc.max((a - b).abs());
                }
            }
            pooled = pooled.max(params.pma(&e.rows).unwrap().max_abs_diff(&z0));
            logits = logits.max(params.decode_logits(&e.rows).unwrap().max_abs_diff(&l0));
            if params.decode(&e.rows).unwrap() != s0 {
                decode_mismatch += 1;
            }
        }
    }
    ensure(
        enc <= 1e-8 && pooled <= 1e-8 && logits <= 1e-8 && decode_mismatch == 0,
        format!(
            "1000 orderings: encoder {enc:.1e}, pma {pooled:.1e}, logits {logits:.1e}, decode mismatches {decode_mismatch}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn attention_macs(params: &CodecParams, n: usize, isab: bool) -> u64 {
    let mut rng = SeededRng::new(n as u64);
    let d = params.config().d;
    let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    let mut g = params.graph();
    let xv = g.tape.constant(x);
    if isab {
        let ids = g.layout().encoder[0].clone();
        g.isab(&ids, xv).unwrap();
    } else {
        let ids = g.layout().refine.clone();
        g.mab(&ids, xv, xv, xv).unwrap();
    }
    g.attention_macs()
}

fn criterion_3() -> Result<String, String> {
    let params = CodecParams::init(
        CodecConfig {
            num_features: 64,
            d: 16,
            heads: 2,
            inducing: 8,
            seed: 5,
            ..Default::default()
        }
        .resolved(),
    )
    .unwrap();
    let isab = attention_macs(&params, 64, true) as f64 / attention_macs(&params, 32, true) as f64;
    let mab = attention_macs(&params, 64, false) as f64 / attention_macs(&params, 32, false) as f64;
    ensure(
        (isab - 2.0).abs() <= 0.2 && (mab - 4.0).abs() <= 0.4,
        format!("ISAB ratio {isab:.3} (2.0 +/- 10%), self-MAB ratio {mab:.3} (4.0 +/- 10%)"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Result<String, String> {
    let start = Instant::now();
    let ev = SubsetEvaluator::new(smoke_binary(20).unwrap(), EvalConfig::default()).unwrap();
    let records = collect_records(&ev, 299, 4).unwrap().records;
    let cfg = CodecConfig {
        num_features: 20,
        d: 64,
        inducing: 16,
        batch_size: 64,
        lr: 0.001,
        epochs: 200,
        seed: 9,
        ..Default::default()
    }
    .resolved();
    let corpus = augment_records(&records, 25, cfg.max_len, cfg.pad_id(), 10).unwrap();

    let mut distinct: Vec<FeatureSubset> = records.iter().map(|r| r.subset.clone()).collect();
    distinct.sort();
    distinct.dedup();
    // Fresh orders, drawn from a stream the augmentation never saw.
    let mut rng = SeededRng::new(77);
    let held_out: Vec<(Vec<usize>, FeatureSubset)> = distinct
        .iter()
        .flat_map(|s| {
            (0..3)
                .map(|_| {
                    let mut order = s.ids().to_vec();
                    rng.shuffle(&mut order);
                    (order, s.clone())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut accuracy = 0.0;
    let trained = train_codec_with(&corpus, CodecParams::init(cfg).unwrap(), |_, p, _| {
        let hits = held_out
            .iter()
            .filter(|(o, s)| p.reconstruct(o).ok().as_ref() == Some(s))
            .count();
        accuracy = hits as f64 / held_out.len() as f64;
        if accuracy >= 0.95 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let elapsed = start.elapsed();
    ensure(
        accuracy >= 0.95 && elapsed < Duration::from_secs(600),
        format!(
            "{} records, corpus {}, held-out accuracy {:.3} after {} epochs, {:.0}s",
            records.len(),
            corpus.len(),
            accuracy,
            trained.params.epochs_trained,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn triple_optimum(ev: &SubsetEvaluator) -> (FeatureSubset, f64) {
    let mut best = (FeatureSubset::from_ids([0, 1, 2]), f64::NEG_INFINITY);
    for a in 0..12 {
        for b in a + 1..12 {
            for c in b + 1..12 {
                let s = FeatureSubset::from_ids([a, b, c]);
                let v = ev.evaluate(&s).unwrap();
                if v > best.1 {
                    best = (s, v);
                }
            }
        }
    }
    best
}

fn criterion_5() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("planted.csv");
    planted_three_of_twelve([2, 5, 9], 12)
        .unwrap()
        .write_csv(&csv, "label")
        .unwrap();

    let mut base = RunConfig {
        dataset: csv,
        collector: CollectorConfig { epochs: 100 },
        augment_copies: 10,
        seed_count: 5,
        search: SearchConfig {
            steps_per_seed: 200,
            ppo_batch: 128,
            ..Default::default()
        },
        ..Default::default()
    };
    base.codec.d = 32;
    base.codec.heads = 4;
    base.codec.inducing = 8;
    base.codec.epochs = 200;

    let oracle_ev = load_evaluator(&base).unwrap();
    let (opt_subset, opt_v) = triple_optimum(&oracle_ev);

    let (mut hits, mut updates, mut bad_clip, mut violations) = (0, 0, 0, 0);
    let mut got = Vec::new();
    for run in 0..10u64 {
        let mut cfg = base.clone();
        cfg.seed = run;
        cfg.output_dir = dir.path().join(format!("run{run}"));
        let ev = load_evaluator(&cfg).unwrap();
        let records = collect_stage(&cfg, &ev).unwrap();
        let (trained, _) = train_stage(&cfg, &records, ev.num_features()).unwrap();
        let (_, out) = search_stage(&cfg, &records, &trained.params, &ev).unwrap();
        if out.best_v >= opt_v - 0.02 {
            hits += 1;
        }
        for u in &out.updates {
            updates += 1;
            if !(0.0..=1.0).contains(&u.clip_fraction) {
                bad_clip += 1;
            }
            violations += u.bound_violations;
        }
        got.push(format!("{:.3}", out.best_v));
    }
    ensure(
        hits >= 8 && bad_clip == 0 && violations == 0 && updates > 0,
        format!(
            "optimum {opt_subset} v={opt_v:.3}; {hits}/10 runs within 0.02 [{}]; {updates} updates, clip out of range {bad_clip}, bound violations {violations}",
            got.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 6

fn end_to_end(file: &str, seed: u64) -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        dataset: data_path(file),
        output_dir: dir.path().to_path_buf(),
        seed,
        ..Default::default()
    };
    cfg.codec.d = 64;
    cfg.codec.inducing = 16;
    cfg.codec.epochs = 200;
    let start = Instant::now();
    let r = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let cv = r.cv.mean_primary;
    let ok = r.best_subset.indices.len() < r.num_features
        && cv >= r.all_features_v - 0.01
        && cv >= r.random_baseline.median
        && elapsed <= Duration::from_secs(30 * 60);
    let detail = format!(
        "{file}: |f*|={}/{} cv={cv:.4} all={:.4} random median={:.4} ({} draws), {:.0}s",
        r.best_subset.indices.len(),
        r.num_features,
        r.all_features_v,
        r.random_baseline.median,
        r.random_baseline.draws,
        elapsed.as_secs_f64()
    );
    ensure(ok, detail)
}

fn criterion_6() -> Result<String, String> {
    let a = end_to_end("smoke_binary.csv", 0);
    let b = end_to_end("smoke_multiclass.csv", 0);
    match (a, b) {
        (Ok(a), Ok(b)) => Ok(format!("{a}; {b}")),
        (a, b) => Err(format!("{}; {}", a.unwrap_or_else(|e| e), b.unwrap_or_else(|e| e))),
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        dataset: data_path("smoke_binary.csv"),
        output_dir: dir.path().to_path_buf(),
        collector: CollectorConfig { epochs: 60 },
        augment_copies: 5,
        seed_count: 5,
        search: SearchConfig {
            steps_per_seed: 100,
            ppo_batch: 64,
            ppo_epochs: 3,
            hidden: [32, 32],
            ..Default::default()
        },
        random_baseline_draws: 10,
        embedding_copies: 5,
        seed: 21,
        ..Default::default()
    };
    cfg.codec.d = 16;
    cfg.codec.heads = 2;
    cfg.codec.inducing = 4;
    cfg.codec.epochs = 3;
    cfg.codec_early_stop = false;
    let a = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let b = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (ja, jb) = (a.without_timings().unwrap(), b.without_timings().unwrap());
    ensure(
        ja == jb,
        format!("two runs, report of {} bytes, identical: {}", ja.len(), ja == jb),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Result<String, String> {
    let r = compute_reward(0.85, 0.80, 5, 20, 0.1).map_err(|e| e.to_string())?;
    let g = discounted_returns(&[1.0, 1.0, 1.0], 0.5);
    let c = clip(1.5, 0.8, 1.2);
    ensure(
        r == 0.680 && g == [1.75, 1.5, 1.0] && c == 1.2,
        format!("reward {r}, returns {g:?}, clip {c}"),
    )
}

fn main() {
    let criteria: [(u32, &str, Check); 8] = [
        (1, "gradient suite", criterion_1),
        (2, "permutation invariance", criterion_2),
        (3, "attention complexity", criterion_3),
        (4, "reconstruction", criterion_4),
        (5, "policy-search sanity", criterion_5),
        (6, "end-to-end", criterion_6),
        (7, "determinism", criterion_7),
        (8, "reward and return values", criterion_8),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("acceptance {id} PASS {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("acceptance {id} FAIL {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
