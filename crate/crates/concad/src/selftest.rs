//! Built-in verification battery.
//!
//! `concad selftest` runs every check here on any install, without the
//! test harness: layer kernels against hand values and finite
//! differences, the signal pipeline against constructed oracles, loss
//! identities, and metric arithmetic. The full-model finite-difference
//! sweep used by `concad gradcheck` also lives here.

use crate::error::{Error, Result};
use crate::losses::{cosine_similarity, cross_entropy, hybrid, supervised_contrastive};
use crate::model::{ConcadModel, ModelConfig, ModelInput};
use crate::rng::RngStream;
use crate::signal::annotations::{
    classify_annotations, parse_text_annotations, AnnotationConfig, LabelMap,
};
use crate::signal::augment::{augment, AugmentationSpec};
use crate::signal::features::{derive_rri_rpe, median_filter, raw_rri, resample_cubic};
use crate::signal::io::{decode_format212, encode_format212};
use crate::signal::rpeaks::detect_r_peaks;
use crate::signal::segments::SegmentBundle;
use crate::signal::synth::{gaussian_pulse_train, PulseTrainSpec};
use crate::signal::{ApneaClass, EcgRecord};
use crate::tensor::gradcheck::{grad_check, relative_error};
use crate::tensor::init::he_normal_init;
use crate::tensor::ops;
use crate::tensor::optim::{amsgrad_step, AmsGradConfig};
use crate::tensor::{Mode, Parameter, Tensor};
use crate::train::metrics::metrics_from_confusion;

type CheckFn = Box<dyn Fn() -> Result<()>>;

pub struct Check {
    pub name: &'static str,
    pub run: CheckFn,
}

fn expect(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Numeric(msg.into()))
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<()> {
    expect((a - b).abs() <= tol, format!("{what}: {a} vs {b} (tol {tol})"))
}

fn fold_loss(out: &Tensor, fold: &[f64]) -> f64 {
    out.data().iter().zip(fold).map(|(a, b)| a * b).sum()
}

/// All self-test checks, in execution order.
pub fn all_checks() -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();
    let mut add = |name: &'static str, f: CheckFn| checks.push(Check { name, run: f });

    // ---- tensor engine ---------------------------------------------------
    add(
        "conv1d identity kernel",
        Box::new(|| {
            let input = Tensor::from_vec(&[1, 4, 1], vec![1.0, -2.0, 3.0, 0.5])?;
            let kernel = Tensor::from_vec(&[1, 1, 1], vec![1.0])?;
            let out = ops::conv1d(&input, &kernel, &Tensor::zeros(&[1]), 1)?;
            expect(out.data() == input.data(), "identity kernel changed values")
        }),
    );
    add(
        "conv1d difference kernel",
        Box::new(|| {
            let input = Tensor::from_vec(&[1, 3, 1], vec![1.0, 2.0, 4.0])?;
            let kernel = Tensor::from_vec(&[2, 1, 1], vec![-1.0, 1.0])?;
            let out = ops::conv1d(&input, &kernel, &Tensor::zeros(&[1]), 1)?;
            expect(out.data() == [1.0, 2.0], format!("got {:?}", out.data()))
        }),
    );
    add(
        "conv1d gradient vs finite differences",
        Box::new(|| {
            let mut rng = RngStream::new(1234);
            let input = Tensor::from_vec(&[2, 9, 2], (0..36).map(|_| rng.normal()).collect())?;
            let kernel = Tensor::from_vec(&[3, 2, 2], (0..12).map(|_| rng.normal()).collect())?;
            let bias = Tensor::from_vec(&[2], vec![rng.normal(), rng.normal()])?;
            let fold: Vec<f64> = (0..2 * 4 * 2).map(|_| rng.normal()).collect();
            let fold_t = Tensor::from_vec(&[2, 4, 2], fold.clone())?;
            let (dx, _, _) = ops::conv1d_backward(&input, &kernel, 2, &fold_t)?;
            let err = grad_check(
                &mut |p: &Tensor, _| {
                    Ok((fold_loss(&ops::conv1d(p, &kernel, &bias, 2)?, &fold), Some(dx.clone())))
                },
                &input,
                1e-6,
            )?;
            expect(err < 1e-6, format!("rel err {err}"))
        }),
    );
    add(
        "batchnorm zeroes constant input",
        Box::new(|| {
            let input = Tensor::filled(&[2, 3, 1], 5.0);
            let state = ops::BatchNormState::new(1);
            let (out, _, _) = ops::batchnorm1d(
                &input,
                &Tensor::filled(&[1], 1.0),
                &Tensor::zeros(&[1]),
                &state,
                Mode::Train,
            )?;
            expect(out.data().iter().all(|v| v.abs() < 1e-9), "not zeroed")
        }),
    );
    add(
        "batchnorm keeps unit-variance input",
        Box::new(|| {
            let input = Tensor::from_vec(&[1, 4, 1], vec![-1.0, 1.0, -1.0, 1.0])?;
            let state = ops::BatchNormState::new(1);
            let (out, _, _) = ops::batchnorm1d(
                &input,
                &Tensor::filled(&[1], 1.0),
                &Tensor::zeros(&[1]),
                &state,
                Mode::Train,
            )?;
            for (o, x) in out.data().iter().zip(input.data()) {
                close(*o, *x, 1e-4, "pm-one input")?;
            }
            Ok(())
        }),
    );
    add(
        "batchnorm normalizes random input",
        Box::new(|| {
            let mut rng = RngStream::new(7);
            let input =
                Tensor::from_vec(&[4, 25, 1], (0..100).map(|_| 100.0 * rng.normal()).collect())?;
            let state = ops::BatchNormState::new(1);
            let (out, _, _) = ops::batchnorm1d(
                &input,
                &Tensor::filled(&[1], 1.0),
                &Tensor::zeros(&[1]),
                &state,
                Mode::Train,
            )?;
            let n = out.len() as f64;
            let mean = out.data().iter().sum::<f64>() / n;
            let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            close(mean, 0.0, 1e-6, "bn mean")?;
            close(var, 1.0, 1e-6, "bn variance")
        }),
    );
    add(
        "maxpool values and tie break",
        Box::new(|| {
            let input = Tensor::from_vec(&[1, 4, 1], vec![1.0, 3.0, 2.0, 4.0])?;
            let (out, _) = ops::maxpool1d(&input, 2)?;
            expect(out.data() == [3.0, 4.0], "window maxima")?;
            let (id, _) = ops::maxpool1d(&input, 1)?;
            expect(id.data() == input.data(), "pool 1 identity")?;
            let tie = Tensor::from_vec(&[1, 2, 1], vec![2.0, 2.0])?;
            let (_, argmax) = ops::maxpool1d(&tie, 2)?;
            let g = Tensor::from_vec(&[1, 1, 1], vec![1.0])?;
            let dx = ops::maxpool1d_backward(&argmax, tie.shape(), &g)?;
            expect(dx.data() == [1.0, 0.0], "tie gradient to first element")
        }),
    );
    add(
        "dropout identities and statistics",
        Box::new(|| {
            let input = Tensor::from_vec(&[1, 3, 1], vec![1.0, -2.0, 3.0])?;
            let (out, _) = ops::dropout(&input, 0.0, Mode::Train, Some(&mut RngStream::new(3)))?;
            expect(out.data() == input.data(), "rate 0 identity")?;
            let (out, _) = ops::dropout(&input, 0.9, Mode::Infer, None)?;
            expect(out.data() == input.data(), "infer identity")?;
            let big = Tensor::filled(&[100_000], 1.0);
            let (out, _) = ops::dropout(&big, 0.5, Mode::Train, Some(&mut RngStream::new(17)))?;
            let survivors = out.data().iter().filter(|v| **v != 0.0).count() as f64 / 1e5;
            close(survivors, 0.5, 0.01, "survivor fraction")?;
            let mean = out.data().iter().sum::<f64>() / 1e5;
            close(mean, 1.0, 0.02, "dropout mean")
        }),
    );
    add(
        "dense identities and gradient",
        Box::new(|| {
            let input = Tensor::from_vec(&[1, 2], vec![1.0, 2.0])?;
            let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 2.0])?;
            let b = Tensor::from_vec(&[2], vec![1.0, 1.0])?;
            let out = ops::dense(&input, &w, &b)?;
            expect(out.data() == [2.0, 5.0], "hand arithmetic")?;
            let mut rng = RngStream::new(5);
            let x = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.normal()).collect())?;
            let w = Tensor::from_vec(&[4, 2], (0..8).map(|_| rng.normal()).collect())?;
            let b = Tensor::from_vec(&[2], vec![rng.normal(), rng.normal()])?;
            let fold: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let fold_t = Tensor::from_vec(&[3, 2], fold.clone())?;
            let (_, dw, _) = ops::dense_backward(&x, &w, &fold_t)?;
            let err = grad_check(
                &mut |p: &Tensor, _| {
                    Ok((fold_loss(&ops::dense(&x, p, &b)?, &fold), Some(dw.clone())))
                },
                &w,
                1e-6,
            )?;
            expect(err < 1e-6, format!("dense weight grad err {err}"))
        }),
    );
    add(
        "activation values",
        Box::new(|| {
            let r = ops::relu(&Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0])?);
            expect(r.data() == [0.0, 0.0, 2.0], "relu")?;
            let s = ops::softmax(&Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0])?, 1)?;
            for v in s.data() {
                close(*v, 1.0 / 3.0, 1e-12, "softmax symmetry")?;
            }
            let l = ops::l2_normalize(&Tensor::from_vec(&[1, 2], vec![3.0, 4.0])?, 1)?;
            close(l.data()[0], 0.6, 1e-12, "l2 x")?;
            close(l.data()[1], 0.8, 1e-12, "l2 y")
        }),
    );
    add(
        "he-normal statistics and determinism",
        Box::new(|| {
            let mut rng = RngStream::new(2024);
            let t = he_normal_init(&[100_000], 50, &mut rng)?;
            let n = t.len() as f64;
            let mean = t.data().iter().sum::<f64>() / n;
            let var = t.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            close(var, 0.04, 0.002, "fan-in 50 variance")?;
            let t2 = he_normal_init(&[100_000], 2, &mut rng)?;
            let mean2 = t2.data().iter().sum::<f64>() / n;
            let var2 = t2.data().iter().map(|x| (x - mean2) * (x - mean2)).sum::<f64>() / n;
            close(var2, 1.0, 0.05, "fan-in 2 variance")?;
            let a = he_normal_init(&[64], 8, &mut RngStream::new(7))?;
            let b = he_normal_init(&[64], 8, &mut RngStream::new(7))?;
            expect(a.data() == b.data(), "seeded init not bit-identical")
        }),
    );
    add(
        "amsgrad hand step and quadratic descent",
        Box::new(|| {
            let mut p = Parameter::new(Tensor::from_vec(&[1], vec![0.0])?);
            p.value.grad_mut()[0] = 1.0;
            amsgrad_step(&mut p, &AmsGradConfig::with_lr(0.005), 0.0)?;
            close(p.value.data()[0], -0.005, 1e-8, "first step")?;
            let mut q = Parameter::new(Tensor::from_vec(&[1], vec![1.5])?);
            for _ in 0..5 {
                q.zero_grad();
                q.value.grad_mut();
                amsgrad_step(&mut q, &AmsGradConfig::with_lr(0.005), 0.0)?;
            }
            close(q.value.data()[0], 1.5, 0.0, "zero grads move nothing")?;
            let mut t = Parameter::new(Tensor::from_vec(&[1], vec![1.0])?);
            for _ in 0..2000 {
                t.zero_grad();
                let theta = t.value.data()[0];
                t.value.grad_mut()[0] = 2.0 * theta;
                amsgrad_step(&mut t, &AmsGradConfig::with_lr(0.005), 0.0)?;
            }
            expect(
                t.value.data()[0].abs() < 0.01,
                format!("quadratic end {}", t.value.data()[0]),
            )
        }),
    );
    add(
        "gradient checker on closed forms",
        Box::new(|| {
            let point = Tensor::from_vec(&[2], vec![1.0, 2.0])?;
            let err = grad_check(
                &mut |x: &Tensor, _| {
                    let v = x.data().iter().map(|v| v * v).sum();
                    Ok((
                        v,
                        Some(Tensor::from_vec(
                            &[2],
                            x.data().iter().map(|v| 2.0 * v).collect(),
                        )?),
                    ))
                },
                &point,
                1e-6,
            )?;
            expect(err < 1e-8, format!("sum of squares err {err}"))?;
            let point = Tensor::from_vec(&[4], vec![-1.5, 0.3, 2.0, -0.2])?;
            let err = grad_check(
                &mut |x: &Tensor, _| {
                    let v = x.data().iter().map(|v| v.max(0.0)).sum();
                    let g = x
                        .data()
                        .iter()
                        .map(|v| if *v > 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    Ok((v, Some(Tensor::from_vec(&[4], g)?)))
                },
                &point,
                1e-6,
            )?;
            expect(err < 1e-9, format!("relu subgradient err {err}"))
        }),
    );

    // ---- signal pipeline -------------------------------------------------
    add(
        "adc gain arithmetic",
        Box::new(|| {
            for (adc, mv) in [(100, 0.5), (-100, -0.5), (0, 0.0)] {
                close((adc as f64 - 0.0) / 200.0, mv, 1e-12, "gain conversion")?;
            }
            Ok(())
        }),
    );
    add(
        "format 212 pair roundtrip",
        Box::new(|| {
            let decoded = decode_format212(&encode_format212(&[1, -1])?);
            expect(decoded == [1, -1], format!("got {decoded:?}"))
        }),
    );
    add(
        "text annotations map to epochs",
        Box::new(|| {
            let raw = parse_text_annotations("0 N\n6000 A\n")?;
            let cfg = AnnotationConfig {
                fs: 100.0,
                epoch_length_s: 60.0,
                label_map: LabelMap::minute_codes(),
                strict: true,
            };
            let (set, _) = classify_annotations(&raw, &cfg)?;
            expect(
                set.labels[0].class == ApneaClass::Normal
                    && set.labels[1].class == ApneaClass::Apnea,
                "minute labels",
            )?;
            expect(classify_annotations(&[], &cfg).is_err(), "empty must fail")?;
            let aux = LabelMap::aux_event_tokens();
            expect(
                aux.classify("\"", "3 OA") == Some(ApneaClass::Apnea),
                "aux `3 OA` maps to apnea",
            )
        }),
    );
    add(
        "r-peak detector on 1 Hz train",
        Box::new(|| {
            let spec = PulseTrainSpec {
                snr_db: Some(20.0),
                ..Default::default()
            };
            let (samples, truth) = gaussian_pulse_train(&spec, Some(&mut RngStream::new(42)));
            let record = EcgRecord::new("synthetic", 100.0, samples)?;
            let peaks = detect_r_peaks(&record)?;
            expect(peaks.len() == 60, format!("{} detections", peaks.len()))?;
            for (p, t) in peaks.iter().zip(&truth) {
                expect(p.abs_diff(*t) <= 5, format!("peak {p} vs true {t}"))?;
            }
            let flat = EcgRecord::new("flat", 100.0, vec![0.0; 1000])?;
            expect(detect_r_peaks(&flat)?.is_empty(), "flat signal has no peaks")
        }),
    );
    add(
        "raw rri and median filter",
        Box::new(|| {
            expect(raw_rri(&[100, 200, 310], 100.0) == [1.0, 1.1], "raw rri")?;
            let filtered = median_filter(&[1.0, 1.0, 1.0, 5.0, 1.0, 1.0, 1.0], 5)?;
            expect(filtered == vec![1.0; 7], "spike not removed")
        }),
    );
    add(
        "cubic resampling reproduces cubics",
        Box::new(|| {
            let xs: Vec<f64> = (0..5).map(|i| i as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
            let out = resample_cubic(&xs, &ys, 0.0, 4.0, 9)?;
            for (i, v) in out.iter().enumerate() {
                let x = 0.5 * i as f64;
                close(*v, x * x * x, 1e-9, "cubic exactness")?;
            }
            Ok(())
        }),
    );
    add(
        "feature window requires four peaks",
        Box::new(|| {
            let record = EcgRecord::new("r", 100.0, vec![1.0; 1000])?;
            expect(
                derive_rri_rpe(&record, &[100, 200, 310], (0, 1000), 30, 5).is_err(),
                "three peaks must be rejected",
            )
        }),
    );
    add(
        "augmentation preserves multiset",
        Box::new(|| {
            let bundle = SegmentBundle {
                record_id: "r".into(),
                epoch_index: 0,
                label: ApneaClass::Apnea,
                ecg: (0..50).map(|i| i as f64).collect(),
                rri: (0..10).map(|i| 1.0 + i as f64 * 0.01).collect(),
                rpe: (0..10).map(|i| 0.5 + i as f64 * 0.02).collect(),
                n_peaks: 10,
                center_bpm: 60.0,
            };
            let mut rng = RngStream::new(9);
            let view = augment(&bundle, &AugmentationSpec::default(), &mut rng)?;
            expect(view.label == bundle.label, "label preserved")?;
            let sorted = |v: &[f64]| {
                let mut s = v.to_vec();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                s
            };
            expect(sorted(&view.ecg) == sorted(&bundle.ecg), "ecg multiset")?;
            expect(sorted(&view.rri) == sorted(&bundle.rri), "rri multiset")
        }),
    );

    // ---- model -----------------------------------------------------------
    add(
        "extractor shape recurrence",
        Box::new(|| {
            let cfg = ModelConfig::apnea_ecg(0);
            expect(cfg.ecg.output_shape(6000)? == (1, 128), "minute window shape")?;
            expect(
                cfg.ecg.output_shape(30000)? == (10, 128),
                "five-minute window shape",
            )
        }),
    );
    add(
        "attention softmax arithmetic",
        Box::new(|| {
            let cfg = ModelConfig::toy();
            let mut model = ConcadModel::init(&cfg, &mut RngStream::new(61))?;
            for i in 0..3 {
                model.attention.w[i]
                    .value
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
                model.attention.b[i].value.data_mut()[0] = if i == 0 { 2.0f64.ln() } else { 0.0 };
            }
            let input = toy_input(&cfg, 2, 5)?;
            let (out, _) = model.forward(&input, Mode::Infer, None, false)?;
            let row = &out.attention.alpha.data()[0..3];
            close(row[0], 0.5, 1e-12, "alpha 0")?;
            close(row[1], 0.25, 1e-12, "alpha 1")?;
            close(row[2], 0.25, 1e-12, "alpha 2")
        }),
    );
    add(
        "heads: unit projections, simplex probabilities",
        Box::new(|| {
            let cfg = ModelConfig::toy();
            let model = ConcadModel::init(&cfg, &mut RngStream::new(2))?;
            let input = toy_input(&cfg, 3, 8)?;
            let (out, _) = model.forward(&input, Mode::Infer, None, true)?;
            let z = out.z.unwrap();
            for bi in 0..3 {
                let norm: f64 = z.data()[bi * cfg.proj_dim..(bi + 1) * cfg.proj_dim]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                close(norm, 1.0, 1e-12, "projection norm")?;
                let psum: f64 = out.probs.data()[bi * 2..(bi + 1) * 2].iter().sum();
                close(psum, 1.0, 1e-12, "probability sum")?;
            }
            expect(
                model.param_count(false)
                    == model.param_count(true)
                        - (cfg.attention_dim * cfg.proj_dim + cfg.proj_dim),
                "prediction drops exactly the projection parameters",
            )
        }),
    );
    add(
        "init determinism and census",
        Box::new(|| {
            let cfg = ModelConfig::toy();
            let a = ConcadModel::init(&cfg, &mut RngStream::new(9))?;
            let b = ConcadModel::init(&cfg, &mut RngStream::new(9))?;
            let dump = |m: &ConcadModel| {
                let mut out = Vec::new();
                m.visit_params(&mut |_, _, p| out.extend_from_slice(p.value.data()));
                out
            };
            expect(dump(&a) == dump(&b), "same seed differs")?;
            expect(
                a.param_count(true) == 386,
                format!("census {}", a.param_count(true)),
            )
        }),
    );

    // ---- losses ----------------------------------------------------------
    add(
        "cross-entropy hand values",
        Box::new(|| {
            let probs = Tensor::from_vec(&[1, 2], vec![0.5, 0.5])?;
            close(
                cross_entropy(&probs, &[0], None)?.value,
                std::f64::consts::LN_2,
                1e-12,
                "even split",
            )?;
            let sure = Tensor::from_vec(&[1, 2], vec![1.0, 0.0])?;
            close(cross_entropy(&sure, &[0], None)?.value, 0.0, 0.0, "certain")?;
            let batch = Tensor::from_vec(&[2, 2], vec![0.9, 0.1, 0.2, 0.8])?;
            close(
                cross_entropy(&batch, &[0, 1], None)?.value,
                0.16425203300686575,
                1e-12,
                "two-row batch",
            )
        }),
    );
    add(
        "cosine similarity range",
        Box::new(|| {
            close(cosine_similarity(&[1.0, 2.0], &[1.0, 2.0])?, 1.0, 1e-12, "self")?;
            close(
                cosine_similarity(&[1.0, 0.0], &[0.0, 1.0])?,
                0.0,
                1e-12,
                "orthogonal",
            )?;
            close(
                cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0])?,
                -1.0,
                1e-12,
                "opposite",
            )
        }),
    );
    add(
        "contrastive loss identities",
        Box::new(|| {
            let aligned = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 1.0, 0.0])?;
            let out = supervised_contrastive(&aligned, &[1, 1], 1.0, false)?;
            close(out.value, 0.0, 1e-12, "aligned pair")?;
            let mixed = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0])?;
            let out = supervised_contrastive(&mixed, &[0, 1], 0.5, false)?;
            expect(
                out.degenerate && out.value == 0.0,
                "no-positive batch flags degenerate",
            )?;
            let basis = Tensor::from_vec(
                &[4, 4],
                vec![
                    1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
                    1.0,
                ],
            )?;
            let out = supervised_contrastive(&basis, &[0, 0, 1, 1], 0.5, false)?;
            close(out.value, 3.0f64.ln(), 1e-12, "orthonormal batch")
        }),
    );
    add(
        "hybrid combination identities",
        Box::new(|| {
            close(hybrid(0.6, 0.4, 1.0), 0.6, 0.0, "lambda 1")?;
            close(hybrid(0.6, 0.4, 0.0), 0.4, 0.0, "lambda 0")?;
            close(hybrid(0.6, 0.4, 0.5), 0.5, 1e-15, "lambda half")
        }),
    );

    // ---- metrics ---------------------------------------------------------
    add(
        "metric arithmetic",
        Box::new(|| {
            let perfect = metrics_from_confusion([[10, 0], [0, 10]])?;
            expect(
                perfect.accuracy == 1.0 && perfect.macro_f1 == 1.0,
                "perfect classifier",
            )?;
            let majority = metrics_from_confusion([[70, 0], [30, 0]])?;
            close(majority.accuracy, 0.7, 1e-12, "majority accuracy")?;
            close(majority.macro_f1, 0.4117647058823529, 1e-12, "majority macro F1")?;
            let hand = metrics_from_confusion([[50, 10], [5, 35]])?;
            close(hand.accuracy, 0.85, 1e-12, "hand confusion accuracy")?;
            close(hand.macro_f1, 0.8465473145780051, 1e-12, "hand confusion macro F1")
        }),
    );

    // ---- end-to-end gradient ----------------------------------------------
    add(
        "full-model gradient vs finite differences",
        Box::new(|| {
            let err = full_model_gradient_check(&ModelConfig::toy(), 0.5, 0.5, 4, 99)?;
            expect(err < 1e-4, format!("full-model rel err {err}"))
        }),
    );

    checks
}

fn toy_input(cfg: &ModelConfig, n: usize, seed: u64) -> Result<ModelInput> {
    let mut rng = RngStream::new(seed);
    Ok(ModelInput {
        ecg: Tensor::from_vec(
            &[n, cfg.ecg_len, 1],
            (0..n * cfg.ecg_len).map(|_| rng.normal()).collect(),
        )?,
        rri: Tensor::from_vec(
            &[n, cfg.rri_len, 1],
            (0..n * cfg.rri_len).map(|_| rng.normal()).collect(),
        )?,
        rpe: Tensor::from_vec(
            &[n, cfg.rri_len, 1],
            (0..n * cfg.rri_len).map(|_| rng.normal()).collect(),
        )?,
        labels: (0..n).map(|i| i % 2).collect(),
    })
}

fn read_param(model: &ConcadModel, name: &str, ci: usize) -> f64 {
    let mut value = f64::NAN;
    model.visit_params(&mut |n, _, p| {
        if n == name {
            value = p.value.data()[ci];
        }
    });
    value
}

fn write_param(model: &mut ConcadModel, name: &str, ci: usize, v: f64) {
    model.visit_params_mut(&mut |n, _, p| {
        if n == name {
            p.value.data_mut()[ci] = v;
        }
    });
}

/// Sweep every parameter of a freshly initialized model and compare the
/// analytic gradient of the hybrid loss against central finite
/// differences on a random batch. Returns the maximum relative error.
///
/// Dropout masks are re-seeded identically on every evaluation and
/// forward passes never mutate batch-norm state, so the loss is a
/// deterministic function of the parameters.
pub fn full_model_gradient_check(
    config: &ModelConfig,
    lambda: f64,
    tau: f64,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(seed);
    let mut model = ConcadModel::init(config, &mut rng)?;
    let input = toy_input(config, batch, seed ^ 0x5eed)?;
    let mask_seed = seed ^ 0xd0;

    fn loss_of(
        model: &ConcadModel,
        input: &ModelInput,
        mask_seed: u64,
        lambda: f64,
        tau: f64,
    ) -> Result<f64> {
        let (out, _) =
            model.forward(input, Mode::Train, Some(&mut RngStream::new(mask_seed)), true)?;
        let ce = cross_entropy(&out.probs, &input.labels, None)?;
        let sc = supervised_contrastive(out.z.as_ref().unwrap(), &input.labels, tau, false)?;
        Ok(hybrid(ce.value, sc.value, lambda))
    }

    // Analytic gradients at the point.
    model.zero_grads();
    let (out, cache) =
        model.forward(&input, Mode::Train, Some(&mut RngStream::new(mask_seed)), true)?;
    let ce = cross_entropy(&out.probs, &input.labels, None)?;
    let sc = supervised_contrastive(out.z.as_ref().unwrap(), &input.labels, tau, false)?;
    let grad_probs = Tensor::from_vec(
        ce.grad_probs.shape(),
        ce.grad_probs.data().iter().map(|g| g * lambda).collect(),
    )?;
    let grad_z = Tensor::from_vec(
        sc.grad_z.shape(),
        sc.grad_z.data().iter().map(|g| g * (1.0 - lambda)).collect(),
    )?;
    model.backward(&cache, &grad_probs, Some(&grad_z))?;

    let mut names: Vec<String> = Vec::new();
    let mut grads: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |name, _, p| {
        names.push(name);
        grads.push(p.value.grad().map(<[f64]>::to_vec).unwrap_or_default());
    });

    let step = 1e-5;
    let mut max_err = 0.0f64;
    for (pi, name) in names.iter().enumerate() {
        for (ci, &g) in grads[pi].iter().enumerate() {
            let orig = read_param(&model, name, ci);
            let h = step * orig.abs().max(1.0);
            write_param(&mut model, name, ci, orig + h);
            let plus = loss_of(&model, &input, mask_seed, lambda, tau)?;
            write_param(&mut model, name, ci, orig - h);
            let minus = loss_of(&model, &input, mask_seed, lambda, tau)?;
            write_param(&mut model, name, ci, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss probing {name}[{ci}]"
                )));
            }
            let fd = (plus - minus) / (2.0 * h);
            let err = relative_error(fd, g);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Run every check, reporting each outcome. Returns (passed, failed).
pub fn run_all(mut report: impl FnMut(&str, Option<&Error>)) -> (usize, usize) {
    let mut passed = 0;
    let mut failed = 0;
    for check in all_checks() {
        match (check.run)() {
            Ok(()) => {
                passed += 1;
                report(check.name, None);
            }
            Err(e) => {
                failed += 1;
                report(check.name, Some(&e));
            }
        }
    }
    (passed, failed)
}
