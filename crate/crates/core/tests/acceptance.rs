//! Acceptance criteria, run in order from one test so that wall-clock
//! limits are measured without other tests competing for cores.
//!
//! Each criterion prints one `criterion N PASS|FAIL` line; the test fails
//! if any criterion does.
//!
//! ```text
//! cargo test --release -p canvolve --test acceptance -- --nocapture
//! ```

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use canvolve::autodiff::{grad_check, ops, Tape, Var};
use canvolve::losses::{
    class_sums, dice_loss, dsf, dsl, evaluate as loss_value, focal_loss, one_hot, weighted_ce,
    ClassWeights, LossConfig,
};
use canvolve::metrics::{
    evaluate_case, extract_surface, hausdorff, msd, nearest_distances,
    nearest_distances_brute_force, BinaryMask, SurfacePointSet,
};
use canvolve::model::{count_parameters, receptive_field, ModelConfig, Network};
use canvolve::nn::{self, dilated_conv3d, graph, init_identity, ConvSpec, Initializer};
use canvolve::postproc::postprocess_labels;
use canvolve::trainer::{evaluate, LossKind, LossSettings, StepRecord, TrainConfig, Trainer};
use canvolve::volio::{
    read_labels, read_nifti1, read_volume, synth_phantom, write_labels, write_volume, Case,
    Dataset, LabelMap, NiftiDatatype, Volume,
};
use canvolve::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn within(limit: Duration, start: Instant) -> std::result::Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    if start.elapsed() < limit {
        Ok(secs)
    } else {
        Err(format!("took {secs:.1} s, limit {} s", limit.as_secs()))
    }
}

fn criterion(n: u32, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} {tag}: {title}: {detail}");
    outcome.is_ok()
}

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = uniform(tape.value(y).shape(), seed, -1.0, 1.0);
    let r = tape.constant(r);
    let prod = ops::mul(tape, y, r)?;
    ops::sum(tape, prod)
}

fn phantom_dataset(count: usize, size: usize) -> Dataset {
    Dataset {
        cases: (0..count)
            .map(|i| {
                let (volume, labels) = synth_phantom(1000 + i as u64, [size; 3], [1.0; 3], 3).unwrap();
                Case {
                    id: format!("phantom_{i:02}"),
                    volume,
                    labels,
                }
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// 1. Loss algebra

fn loss_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for pair in 0..200u64 {
        let k = if pair % 2 == 0 { 2 } else { 6 };
        let dims = [0; 3].map(|_| rng.gen_range(1..=8usize));
        let n: usize = dims.iter().product();
        let p = Tensor::from_fn(&[1, k, dims[0], dims[1], dims[2]], |_| rng.gen_range(0.0..1.0));
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..k) as u8).collect();
        let q: Tensor<f64> = one_hot(&labels, dims, k).unwrap();

        // Overlap form evaluated directly on the raw arrays.
        let mut overlap = Vec::with_capacity(k);
        for c in 0..k {
            let (a, b) = (&p.data()[c * n..(c + 1) * n], &q.data()[c * n..(c + 1) * n]);
            let pq: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let den: f64 = a.iter().map(|x| x * x).sum::<f64>() + b.iter().map(|y| y * y).sum::<f64>();
            overlap.push(1.0 - 2.0 * pq / den);
        }
        for (c, s) in class_sums(&p, &q).unwrap().iter().enumerate() {
            worst = worst.max((s.dice_term() - overlap[c]).abs());
        }
        let total = loss_value(&p, |t, v| dice_loss(t, v, &q, &ClassWeights::uniform(k))).unwrap();
        worst = worst.max((total - overlap.iter().sum::<f64>() / k as f64).abs());
    }
    ensure!(worst < 1e-12, "max deviation {worst:e}");

    let p = Tensor::new(&[1, 1, 2, 2, 2], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let q = Tensor::new(&[1, 1, 2, 2, 2], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let hand = loss_value(&p, |t, v| dsl(t, v, &q, &ClassWeights::uniform(1))).unwrap();
    ensure!(hand == 1.5, "disjoint DSL {hand}");
    let secs = within(Duration::from_secs(5), start)?;
    Ok(format!("200 pairs, max deviation {worst:.1e}; disjoint DSL = {hand}; {secs:.2} s"))
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut results: Vec<(String, f64)> = Vec::new();

    for d in [1, 2, 4, 8] {
        let spec = ConvSpec::same(2, 2, 3, 1, d, Initializer::GlorotUniform).unwrap();
        let x = uniform(&[1, 2, 5, 5, 5], 10 + d as u64, -1.0, 1.0);
        let w = uniform(&spec.weight_shape(), 20 + d as u64, -0.5, 0.5);
        let b = uniform(&[2], 30 + d as u64, -0.5, 0.5);
        let wrt_x = grad_check(
            |t, v| {
                let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
                let y = graph::dilated_conv3d(t, v, wv, bv, &spec)?;
                project(t, y, 1)
            },
            &x,
            1e-6,
        );
        let wrt_w = grad_check(
            |t, v| {
                let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
                let y = graph::dilated_conv3d(t, xv, v, bv, &spec)?;
                project(t, y, 1)
            },
            &w,
            1e-6,
        );
        let wrt_b = grad_check(
            |t, v| {
                let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
                let y = graph::dilated_conv3d(t, xv, wv, v, &spec)?;
                project(t, y, 1)
            },
            &b,
            1e-6,
        );
        results.push((format!("conv d={d}"), wrt_x.unwrap().max(wrt_w.unwrap()).max(wrt_b.unwrap())));
    }

    let up = ConvSpec::same(3, 2, 3, 2, 1, Initializer::GlorotUniform).unwrap();
    let y0 = uniform(&[1, 3, 2, 2, 2], 40, -1.0, 1.0);
    let wt = uniform(&up.transposed_weight_shape(), 41, -0.5, 0.5);
    let bt = uniform(&[2], 42, -0.5, 0.5);
    let t_x = grad_check(
        |t, v| {
            let (wv, bv) = (t.constant(wt.clone()), t.constant(bt.clone()));
            let y = graph::transposed_conv3d(t, v, wv, bv, &up)?;
            project(t, y, 2)
        },
        &y0,
        1e-6,
    )
    .unwrap();
    let t_w = grad_check(
        |t, v| {
            let (xv, bv) = (t.constant(y0.clone()), t.constant(bt.clone()));
            let y = graph::transposed_conv3d(t, xv, v, bv, &up)?;
            project(t, y, 2)
        },
        &wt,
        1e-6,
    )
    .unwrap();
    results.push(("transposed conv".into(), t_x.max(t_w)));

    let x = uniform(&[1, 2, 3, 3, 3], 50, -1.0, 1.0);
    let (a, b) = (Tensor::new(&[1], vec![0.8]).unwrap(), Tensor::new(&[1], vec![0.6]).unwrap());
    let ad_x = grad_check(
        |t, v| {
            let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
            let y = graph::adain(t, v, av, bv, 1e-5)?;
            project(t, y, 3)
        },
        &x,
        1e-6,
    )
    .unwrap();
    let ad_a = grad_check(
        |t, v| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = graph::adain(t, xv, v, bv, 1e-5)?;
            project(t, y, 3)
        },
        &a,
        1e-6,
    )
    .unwrap();
    let ad_b = grad_check(
        |t, v| {
            let (xv, av) = (t.constant(x.clone()), t.constant(a.clone()));
            let y = graph::adain(t, xv, av, v, 1e-5)?;
            project(t, y, 3)
        },
        &b,
        1e-6,
    )
    .unwrap();
    results.push(("adain".into(), ad_x.max(ad_a).max(ad_b)));

    // Every element at least 0.01 from the kink at zero.
    let x = uniform(&[1, 2, 4, 4, 4], 60, -1.0, 1.0).map(|v| if v.abs() < 0.01 { v + 0.05 } else { v });
    let lr = grad_check(
        |t, v| {
            let y = graph::leaky_relu(t, v, 0.1)?;
            project(t, y, 4)
        },
        &x,
        1e-6,
    )
    .unwrap();
    results.push(("leaky relu".into(), lr));

    let x = uniform(&[1, 4, 2, 2, 2], 70, -3.0, 3.0);
    let sm = grad_check(
        |t, v| {
            let y = graph::softmax_channels(t, v)?;
            project(t, y, 5)
        },
        &x,
        1e-6,
    )
    .unwrap();
    results.push(("softmax".into(), sm));

    let labels: Vec<u8> = (0..27).map(|i| ((i * 7) % 3) as u8).collect();
    let q: Tensor<f64> = one_hot(&labels, [3, 3, 3], 3).unwrap();
    let w = ClassWeights::new(vec![0.4, 1.1, 2.5]).unwrap();
    let config = LossConfig::new(w.clone());
    let logits = uniform(&[1, 3, 3, 3, 3], 80, -1.5, 1.5);
    let through_softmax = |f: &dyn Fn(&mut Tape<f64>, Var) -> Result<Var>| {
        grad_check(
            |t, v| {
                let p = graph::softmax_channels(t, v)?;
                f(t, p)
            },
            &logits,
            1e-6,
        )
        .unwrap()
    };
    results.push(("dice loss".into(), through_softmax(&|t, p| dice_loss(t, p, &q, &w))));
    results.push(("dsl".into(), through_softmax(&|t, p| dsl(t, p, &q, &w))));
    results.push(("focal loss".into(), through_softmax(&|t, p| focal_loss(t, p, &q, &config.alpha, 2.0))));
    results.push(("dsf".into(), through_softmax(&|t, p| dsf(t, p, &q, &config))));
    results.push(("weighted ce".into(), through_softmax(&|t, p| weighted_ce(t, p, &q, &w))));

    for (name, err) in &results {
        ensure!(*err < 1e-4, "{name}: relative error {err:e}");
    }
    let op_worst = results.iter().map(|r| r.1).fold(0.0, f64::max);

    // End to end: two-class network at 8³ under DSF, probing every
    // parameter tensor and the input.
    let cfg = ModelConfig {
        num_classes: 2,
        ..ModelConfig::pelvis()
    };
    let mut net = Network::<f64>::build(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let x = uniform(&[1, 1, 8, 8, 8], 5, -1.0, 1.0);
    let labels: Vec<u8> = (0..512).map(|i| u8::from((i / 64) % 8 >= 3 && i % 8 >= 2)).collect();
    let q: Tensor<f64> = one_hot(&labels, [8, 8, 8], 2).unwrap();
    let counts = [
        labels.iter().filter(|&&l| l == 0).count() as u64,
        labels.iter().filter(|&&l| l == 1).count() as u64,
    ];
    let config = LossConfig::new(ClassWeights::inverse_frequency(&counts).unwrap());
    let originals: Vec<Tensor<f64>> = net.params().into_iter().cloned().collect();
    // Blocks ending in a leaky ReLU; their output signs locate the kinks.
    let activated: Vec<bool> = net.layers().iter().map(|l| l.adain.is_some()).collect();
    let run = |params: &[Tensor<f64>], input: &Tensor<f64>, grads: bool| {
        let mut tape = Tape::new();
        let xv = tape.param(input.clone());
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let out = net.forward_on_tape(&mut tape, xv, &vars).unwrap();
        let loss = dsf(&mut tape, out.probabilities, &q, &config).unwrap();
        let signs: Vec<bool> = out
            .layer_outputs
            .iter()
            .zip(&activated)
            .filter(|(_, &a)| a)
            .flat_map(|(&v, _)| tape.value(v).data().iter().map(|&y| y > 0.0).collect::<Vec<_>>())
            .collect();
        let value = tape.value(loss).item().unwrap();
        let g = grads.then(|| {
            let g = tape.backward(loss).unwrap();
            let mut all: Vec<Tensor<f64>> = vars.iter().map(|&v| g.wrt(v).unwrap()).collect();
            all.push(g.wrt(xv).unwrap());
            all
        });
        (value, signs, g)
    };
    let analytic = run(&originals, &x, true).2.unwrap();
    let mut e2e = 0.0f64;
    let mut shrunk = 0;
    let mut probes = 0;
    for i in 0..=originals.len() {
        let mut prng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let len = analytic[i].len();
        for _ in 0..4 {
            let j = prng.gen_range(0..len);
            let mut h = 1e-5;
            let numeric = loop {
                let eval = |delta: f64| {
                    let (mut params, mut input) = (originals.clone(), x.clone());
                    let t = if i == originals.len() { &mut input } else { &mut params[i] };
                    t.data_mut()[j] += delta;
                    run(&params, &input, false)
                };
                let ((plus, sp, _), (minus, sm, _)) = (eval(h), eval(-h));
                if sp == sm || h <= 1e-8 {
                    break (plus - minus) / (2.0 * h);
                }
                h /= 10.0;
                shrunk += 1;
            };
            let a = analytic[i].data()[j];
            e2e = e2e.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12));
            probes += 1;
        }
    }
    ensure!(e2e < 1e-3, "end-to-end relative error {e2e:e}");
    let secs = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "{} op checks, worst {op_worst:.1e}; end-to-end {probes} probes over {} tensors + input \
         ({shrunk} step reductions at activation kinks), worst {e2e:.1e}; {secs:.1} s",
        results.len(),
        originals.len()
    ))
}

// ---------------------------------------------------------------------------
// 3. Dilated convolution oracle

fn inflate(w: &Tensor<f64>, d: usize) -> Tensor<f64> {
    let s = w.shape();
    let (o, i, u) = (s[0], s[1], s[2]);
    let e = nn::dilated_kernel_extent(u, d);
    let mut out = Tensor::zeros(&[o, i, e, e, e]);
    for c in 0..o * i {
        for z in 0..u {
            for y in 0..u {
                for x in 0..u {
                    out.data_mut()[((c * e + z * d) * e + y * d) * e + x * d] =
                        w.data()[((c * u + z) * u + y) * u + x];
                }
            }
        }
    }
    out
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Integer-valued data keeps every partial sum exact, so equality does
    // not depend on the accumulation order of the two routes.
    let mut ints = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-8i32..=8) as f64);
    let x = ints(&[1, 3, 8, 8, 8]);
    let w = ints(&[4, 3, 3, 3, 3]);
    let b = ints(&[4]);
    for d in [1, 2, 3, 4, 8] {
        let spec = ConvSpec::same(3, 4, 3, 1, d, Initializer::GlorotUniform).unwrap();
        let dense_w = inflate(&w, d);
        let dense = ConvSpec::same(3, 4, dense_w.shape()[2], 1, 1, Initializer::GlorotUniform).unwrap();
        let a = dilated_conv3d(&x, &spec, &w, &b).unwrap();
        let z = dilated_conv3d(&x, &dense, &dense_w, &b).unwrap();
        ensure!(a == z, "dilation {d}: max diff {:e}", a.max_abs_diff(&z).unwrap());
    }
    let xr = uniform(&[1, 4, 8, 8, 8], 10, -5.0, 5.0);
    for d in [1, 2, 3, 4, 8, 16] {
        let spec = ConvSpec::same(4, 4, 3, 1, d, Initializer::Identity).unwrap();
        let wid = init_identity(&spec.weight_shape()).unwrap();
        let y = dilated_conv3d(&xr, &spec, &wid, &Tensor::zeros(&[4])).unwrap();
        ensure!(y == xr, "identity kernel changed the input at dilation {d}");
    }
    Ok("dilations 1, 2, 3, 4, 8 equal the inflated kernels; identity exact for d up to 16".into())
}

// ---------------------------------------------------------------------------
// 4. Architecture audit

fn architecture_audit() -> Outcome {
    let cfg = ModelConfig::pelvis();
    let total = count_parameters(&cfg).unwrap().total();
    ensure!((162_450..=179_550).contains(&total), "parameter total {total}");
    let net = Network::<f64>::build(&cfg, 0).unwrap();
    ensure!(net.param_count() == total, "built network has {} parameters", net.param_count());
    let rf = receptive_field(&cfg).unwrap();
    ensure!(rf == 65, "receptive field {rf}");

    let x = uniform(&[1, 1, 16, 16, 16], 11, -2.0, 2.0);
    let trace = net.forward_trace(&x).unwrap();
    let identity: Vec<String> = cfg
        .layers()
        .unwrap()
        .into_iter()
        .filter(|l| l.conv.init == Initializer::Identity)
        .map(|l| l.name)
        .collect();
    let mut checked = 0;
    for pair in trace.windows(2) {
        let (prev, (name, out)) = (&pair[0].1, &pair[1]);
        if identity.contains(name) {
            let expected = nn::leaky_relu(prev, cfg.lrelu_alpha).unwrap();
            ensure!(*out == expected, "{name} is not the identity block");
            checked += 1;
        }
    }
    ensure!(checked == 3 && checked == identity.len(), "checked {checked} of {identity:?}");
    Ok(format!(
        "{total} parameters, receptive field {rf}, identity blocks {} pass through exactly",
        identity.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 5. Metrics oracle

fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> BinaryMask {
    let density = rng.gen_range(0.02..0.6);
    let mut m = BinaryMask::from_fn(dims, |_, _, _| rng.gen_bool(density));
    if m.count() == 0 {
        m.set(0, 0, 0, true);
    }
    m
}

fn brute_pair(p: &[[f64; 3]], q: &[[f64; 3]]) -> (f64, f64) {
    let directed = |a: &[[f64; 3]], b: &[[f64; 3]]| -> Vec<f64> {
        a.iter()
            .map(|u| {
                b.iter()
                    .map(|v| ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let (a, b) = (directed(p, q), directed(q, p));
    let mean = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (a.len() + b.len()) as f64;
    (mean, a.iter().chain(&b).copied().fold(0.0, f64::max))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for pair in 0..100 {
        let dims = [0; 3].map(|_| rng.gen_range(1..=16usize));
        let spacing = [0; 3].map(|_| rng.gen_range(0.3..3.0));
        let (a, b) = (random_mask(&mut rng, dims), random_mask(&mut rng, dims));
        let (p, q) = (extract_surface(&a, spacing).unwrap(), extract_surface(&b, spacing).unwrap());
        let fast = [nearest_distances(&p, &q).unwrap(), nearest_distances(&q, &p).unwrap()];
        let slow = [
            nearest_distances_brute_force(&p, &q).unwrap(),
            nearest_distances_brute_force(&q, &p).unwrap(),
        ];
        ensure!(fast == slow, "pair {pair}: indexed nearest distances differ from brute force");
        let slow_msd =
            (slow[0].iter().sum::<f64>() + slow[1].iter().sum::<f64>()) / (slow[0].len() + slow[1].len()) as f64;
        let slow_hd = slow[0].iter().chain(&slow[1]).copied().fold(0.0, f64::max);
        let (m, h) = (msd(&p, &q).unwrap(), hausdorff(&p, &q).unwrap());
        ensure!(m == slow_msd && h == slow_hd, "pair {pair}: MSD/HD differ from brute force");
        let (om, oh) = brute_pair(&p.points, &q.points);
        ensure!(h == oh && (m - om).abs() <= 1e-12 * om.max(1.0), "pair {pair}: test oracle disagrees");
        ensure!(h >= m, "pair {pair}: HD {h} < MSD {m}");
    }

    let origin = SurfacePointSet::new(vec![[0.0, 0.0, 0.0]]);
    let far = SurfacePointSet::new(vec![[3.0, 4.0, 0.0]]);
    ensure!(msd(&origin, &far).unwrap() == 5.0 && hausdorff(&origin, &far).unwrap() == 5.0, "5 mm case");
    let two = SurfacePointSet::new(vec![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
    let m = msd(&origin, &two).unwrap();
    ensure!(m == 4.0 / 3.0, "three-point MSD {m}");
    ensure!(hausdorff(&origin, &two).unwrap() == 2.0, "three-point HD");
    Ok("100 pairs up to 16³ identical to brute force; hand cases 5, 4/3 and 2 exact".into())
}

// ---------------------------------------------------------------------------
// 6. Post-processing

fn shifted(labels: &LabelMap, axis: usize, by: isize) -> Vec<u8> {
    let [d, h, w] = labels.dims();
    let mut out = vec![0u8; labels.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let mut src = [z as isize, y as isize, x as isize];
                src[axis] -= by;
                let ext = [d, h, w][axis] as isize;
                if (0..ext).contains(&src[axis]) {
                    out[(z * h + y) * w + x] = labels.get(src[0] as usize, src[1] as usize, src[2] as usize);
                }
            }
        }
    }
    out
}

/// Writes `class` into a `size` box at `corner` if the box and its one-voxel
/// margin are background.
fn plant(data: &mut [u8], dims: [usize; 3], corner: [usize; 3], size: [usize; 3], class: u8) -> bool {
    let [_, h, w] = dims;
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let lo = corner.map(|c| c.saturating_sub(1));
    let hi = [0, 1, 2].map(|a| (corner[a] + size[a] + 1).min(dims[a]));
    if (0..3).any(|a| corner[a] + size[a] > dims[a]) {
        return false;
    }
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for x in lo[2]..hi[2] {
                if data[idx(z, y, x)] != 0 {
                    return false;
                }
            }
        }
    }
    for z in corner[0]..corner[0] + size[0] {
        for y in corner[1]..corner[1] + size[1] {
            for x in corner[2]..corner[2] + size[2] {
                data[idx(z, y, x)] = class;
            }
        }
    }
    true
}

fn postprocessing_direction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_dsc = 0.0f64;
    let mut hd_before = Vec::new();
    let mut hd_after = Vec::new();
    for case in 0..20u64 {
        let (_, truth) = synth_phantom(2000 + case, [32; 3], [1.0; 3], 3).unwrap();
        let dims = truth.dims();
        // An imperfect but plausible prediction: the truth shifted by one voxel.
        let mut pred = shifted(&truth, rng.gen_range(0..3), if rng.gen_bool(0.5) { 1 } else { -1 });
        // Distant islands: a 2³ body blob and a 2-voxel rare-class blob.
        let mut planted = [false; 2];
        for (k, (class, size)) in [(1u8, [2, 2, 2]), (2u8, [1, 1, 2])].into_iter().enumerate() {
            for _ in 0..100 {
                let corner = [0; 3].map(|_| if rng.gen_bool(0.5) { rng.gen_range(0..4) } else { rng.gen_range(26..30) });
                if plant(&mut pred, dims, corner, size, class) {
                    planted[k] = true;
                    break;
                }
            }
        }
        ensure!(planted == [true, true], "case {case}: no free corner for an outlier");
        let pred = LabelMap::new(dims, [1.0; 3], pred, 3).unwrap();
        let cleaned = postprocess_labels(&pred, 3);
        let before = evaluate_case(&pred, &truth, [1.0; 3], 3).unwrap();
        let after = evaluate_case(&cleaned, &truth, [1.0; 3], 3).unwrap();
        for k in [1u8, 2] {
            let (b, a) = (before.class(k).unwrap(), after.class(k).unwrap());
            let (hb, ha) = (b.hd_mm.unwrap(), a.hd_mm.unwrap());
            ensure!(ha < hb, "case {case} class {k}: HD {hb} → {ha}");
            let delta = (a.dsc.unwrap() - b.dsc.unwrap()).abs();
            ensure!(delta < 0.01, "case {case} class {k}: DSC changed by {delta}");
            worst_dsc = worst_dsc.max(delta);
            hd_before.push(hb);
            hd_after.push(ha);
        }
    }
    let secs = within(Duration::from_secs(30), start)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(format!(
        "mean HD {:.2} → {:.2} mm over 40 case-classes, max |ΔDSC| {worst_dsc:.4}; {secs:.1} s",
        mean(&hd_before),
        mean(&hd_after)
    ))
}

// ---------------------------------------------------------------------------
// 7 and 8. Desk-scale training, determinism and resume

fn desk_config(kind: LossKind) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            num_classes: 3,
            ..ModelConfig::pelvis()
        },
        loss: LossSettings {
            kind,
            ..LossSettings::default()
        },
        epochs: 30,
        initial_lr: 1e-3,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn held_out_dice(trainer: &Trainer<f32>, dataset: &Dataset) -> [f64; 2] {
    let held_out = Dataset {
        cases: trainer.split().val.iter().map(|&i| dataset.cases[i].clone()).collect(),
    };
    let summary = evaluate(trainer.network(), &held_out).unwrap().summary();
    [1u8, 2].map(|k| {
        summary
            .iter()
            .find(|s| s.class == k)
            .and_then(|s| s.dsc)
            .map_or(0.0, |s| s.mean)
    })
}

/// Step history without the measured wall-clock times.
fn losses(history: &[StepRecord]) -> Vec<(u64, u64, u64, u64)> {
    history
        .iter()
        .map(|r| (r.step, r.epoch, r.lr.to_bits(), r.loss.to_bits()))
        .collect()
}

struct DeskRuns {
    dataset: Dataset,
    dsf: Option<Trainer<f32>>,
}

fn desk_training(runs: &mut DeskRuns) -> Outcome {
    let start = Instant::now();
    let mut dsf = Trainer::<f32>::new(desk_config(LossKind::Dsf), &runs.dataset).unwrap();
    dsf.run_to_end().unwrap();
    let dsf_secs = start.elapsed().as_secs_f64();
    let [body, rare] = held_out_dice(&dsf, &runs.dataset);

    let mut ce = Trainer::<f32>::new(desk_config(LossKind::Ce), &runs.dataset).unwrap();
    ce.run_to_end().unwrap();
    let [ce_body, ce_rare] = held_out_dice(&ce, &runs.dataset);
    let secs = within(Duration::from_secs(30 * 60), start)?;
    runs.dsf = Some(dsf);
    let detail = format!(
        "DSF held-out DSC {body:.3} / {rare:.3} (rare), CE {ce_body:.3} / {ce_rare:.3}; \
         DSF run {dsf_secs:.0} s, total {secs:.0} s on {} threads",
        rayon::current_num_threads()
    );
    ensure!(body >= 0.90, "prominent-class DSC below 0.90: {detail}");
    ensure!(rare >= 0.70, "rare-class DSC below 0.70: {detail}");
    ensure!(ce_rare < rare, "CE rare-class DSC not lower: {detail}");
    Ok(detail)
}

fn determinism_and_resume(runs: &DeskRuns) -> Outcome {
    let Some(reference) = &runs.dsf else {
        return Err("criterion 7 run unavailable".into());
    };
    let config = desk_config(LossKind::Dsf);

    let mut rerun = Trainer::<f32>::new(config.clone(), &runs.dataset).unwrap();
    rerun.run_to_end().unwrap();
    let (a, b) = (reference.state(), rerun.state());
    ensure!(losses(&a.history) == losses(&b.history), "rerun loss history differs");
    ensure!(a.epochs == b.epochs, "rerun epoch records differ");
    ensure!(reference.network().params() == rerun.network().params(), "rerun weights differ");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = Trainer::<f32>::new(config.clone(), &runs.dataset).unwrap();
    first.run(config.epochs / 2).unwrap();
    first.save(&path).unwrap();
    drop(first);
    let mut resumed = Trainer::<f32>::resume(config.clone(), &runs.dataset, &path).unwrap();
    resumed.run_to_end().unwrap();
    let c = resumed.state();
    ensure!(losses(&a.history) == losses(&c.history), "resumed loss history differs");
    ensure!(a.epochs == c.epochs, "resumed epoch records differ");
    ensure!(a.adam == c.adam, "resumed optimiser state differs");
    ensure!(a.best == c.best, "resumed best snapshot differs");
    ensure!(reference.network().params() == resumed.network().params(), "resumed weights differ");
    Ok(format!(
        "rerun identical over {} steps; resume after epoch {} identical in losses, weights and optimiser state",
        a.history.len(),
        config.epochs / 2
    ))
}

// ---------------------------------------------------------------------------
// 9. I/O

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn mutated_nifti(dir: &std::path::Path, f: impl FnOnce(&mut Vec<u8>)) -> PathBuf {
    let mut bytes = std::fs::read(golden("float32_2x2x2.nii")).unwrap();
    f(&mut bytes);
    static NEXT: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    let n = NEXT.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let path = dir.join(format!("m{n}.nii"));
    std::fs::write(&path, bytes).unwrap();
    path
}

fn io() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..20 {
        let dims = [0; 3].map(|_| rng.gen_range(1..9usize));
        let spacing = [0; 3].map(|_| rng.gen_range(0.1f32..5.0));
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.gen::<u32>() & 0xbf7f_ffff)).collect();
        let v = Volume::new(dims, spacing, data).unwrap();
        let path = dir.path().join(format!("v{i}.vol3d"));
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        ensure!(
            back.dims() == v.dims()
                && back.spacing() == v.spacing()
                && back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "volume {i} changed in a round trip"
        );
        let l = LabelMap::inferred(dims, spacing, (0..n).map(|_| rng.gen_range(0..5u8)).collect()).unwrap();
        let lpath = dir.path().join(format!("l{i}.vol3d"));
        write_labels(&l, &lpath).unwrap();
        ensure!(read_labels(&lpath).unwrap() == l, "label map {i} changed in a round trip");
    }

    let f = read_nifti1(golden("float32_2x2x2.nii")).unwrap();
    ensure!(f.header.datatype == NiftiDatatype::Float32 && f.volume.spacing() == [2.5, 2.0, 1.5], "float32 header");
    let expected: Vec<f32> = (0..8).map(|i| -2.0 + 1.25 * i as f32).collect();
    ensure!(f.volume.data() == expected.as_slice(), "float32 voxels {:?}", f.volume.data());
    let s = read_nifti1(golden("int16_scaled_be.nii")).unwrap();
    ensure!(s.header.big_endian && s.volume.dims() == [1, 2, 3] && s.volume.spacing() == [3.0, 0.8, 0.8], "int16 header");
    ensure!(s.volume.data() == [-5.0, -1.0, 1.0, 5.0, 11.0, 201.0], "int16 scaled voxels {:?}", s.volume.data());
    let u = read_nifti1(golden("uint8_labels_offset.nii")).unwrap();
    let expected: Vec<f32> = (0..24).map(|i| (i % 3) as f32).collect();
    ensure!(u.header.vox_offset == 400 && u.volume.dims() == [2, 3, 4], "uint8 header");
    ensure!(u.volume.data() == expected.as_slice(), "uint8 voxels");

    let d = dir.path();
    let cases: Vec<(&str, PathBuf, fn(&Error) -> bool)> = vec![
        ("detached pair", mutated_nifti(d, |b| b[344..348].copy_from_slice(b"ni1\0")), |e| {
            matches!(e, Error::UnsupportedVariant(_))
        }),
        ("bad magic", mutated_nifti(d, |b| b[344..348].copy_from_slice(b"abcd")), |e| {
            matches!(e, Error::BadMagic { .. })
        }),
        ("gzip", mutated_nifti(d, |b| b.splice(0..0, [0x1f, 0x8b, 8, 0]).for_each(drop)), |e| {
            matches!(e, Error::Compressed)
        }),
        ("float64", mutated_nifti(d, |b| b[70..72].copy_from_slice(&64i16.to_le_bytes())), |e| {
            matches!(e, Error::UnsupportedDtype(64))
        }),
        ("truncated data", mutated_nifti(d, |b| b.truncate(b.len() - 3)), |e| {
            matches!(e, Error::Truncated { .. })
        }),
        ("truncated header", mutated_nifti(d, |b| b.truncate(100)), |e| {
            matches!(e, Error::Truncated { .. })
        }),
        (
            "4-D",
            mutated_nifti(d, |b| {
                b[40..42].copy_from_slice(&4i16.to_le_bytes());
                b[48..50].copy_from_slice(&2i16.to_le_bytes());
            }),
            |e| matches!(e, Error::UnsupportedVariant(_)),
        ),
        ("missing file", d.join("absent.nii"), |e| matches!(e, Error::Io(_))),
    ];
    for (name, path, expected) in &cases {
        match read_nifti1(path) {
            Ok(_) => return Err(format!("{name}: parsed successfully")),
            Err(e) => ensure!(expected(e.root()), "{name}: unexpected error {e}"),
        }
    }
    Ok(format!(
        "20 VOL3D volumes and label maps bit-exact; 3 golden NIfTI files; {} malformed inputs rejected with distinct errors",
        cases.len()
    ))
}

/// `CANVOLVE_CRITERIA=2,4` runs a subset; criterion 8 needs 7.
fn selected() -> Vec<u32> {
    match std::env::var("CANVOLVE_CRITERIA") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=9).collect(),
    }
}

#[test]
fn acceptance_criteria() {
    let threads = canvolve::threads::configure_threads().unwrap_or(1);
    println!("running acceptance criteria with {threads} threads");
    let only = selected();
    let mut runs = DeskRuns {
        dataset: phantom_dataset(20, 32),
        dsf: None,
    };
    let mut failed = Vec::new();
    let mut check = |n: u32, title: &str, f: &mut dyn FnMut() -> Outcome| {
        if !only.contains(&n) {
            println!("criterion {n} SKIP: {title}");
        } else if !criterion(n, title, f) {
            failed.push(n);
        }
    };
    check(1, "loss algebra", &mut loss_algebra);
    check(2, "gradient suite", &mut gradient_suite);
    check(3, "dilated-conv oracle", &mut conv_oracle);
    check(4, "architecture audit", &mut architecture_audit);
    check(5, "metrics oracle", &mut metrics_oracle);
    check(6, "post-processing direction", &mut postprocessing_direction);
    check(7, "desk-scale training", &mut || desk_training(&mut runs));
    check(8, "determinism and checkpointing", &mut || determinism_and_resume(&runs));
    check(9, "I/O", &mut io);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
